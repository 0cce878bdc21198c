#include "anomagent/metrics.hpp"

#include <cmath>

#include "anomagent/error.hpp"
#include "anomagent/kernels.hpp"

namespace anomagent {

double inception_score(const ProbMatrix& p) {
  if (p.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "probability matrix is empty");
  }
  const std::size_t k = p.front().size();
  if (k == 0) {
    throw Error(ErrorCode::ShapeMismatch, "probability rows are empty");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != k) {
      throw Error(ErrorCode::ShapeMismatch,
                  "row " + std::to_string(i) + " has " +
                      std::to_string(p[i].size()) + " entries, expected " +
                      std::to_string(k));
    }
    double sum = 0.0;
    for (const double v : p[i]) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(ErrorCode::DegenerateRow,
                    "row " + std::to_string(i) + " has an entry outside [0,1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(ErrorCode::DegenerateRow,
                  "row " + std::to_string(i) + " sums to " +
                      std::to_string(sum) + ", not 1");
    }
  }

  std::vector<double> marginal(k, 0.0);
  for (const auto& row : p) {
    for (std::size_t j = 0; j < k; ++j) marginal[j] += row[j];
  }
  for (double& m : marginal) m /= static_cast<double>(p.size());

  double kl_sum = 0.0;
  for (const auto& row : p) {
    kl_sum += kernels::row_kl(row.data(), marginal.data(), k);
  }
  return std::exp(kl_sum / static_cast<double>(p.size()));
}

double icl(const std::vector<ClusterDistances>& clusters) {
  double total = 0.0;
  std::size_t eligible = 0;
  for (const auto& c : clusters) {
    if (c.distances.empty()) continue;
    for (const double d : c.distances) {
      if (!(d >= 0.0)) {
        throw Error(ErrorCode::ConfigError,
                    "cluster '" + c.id + "' has a negative distance");
      }
    }
    total += kernels::sum(c.distances.data(), c.distances.size()) /
             static_cast<double>(c.distances.size());
    ++eligible;
  }
  if (eligible == 0) {
    throw Error(ErrorCode::NoEligibleCluster,
                "no cluster with at least one pairwise distance");
  }
  return total / static_cast<double>(eligible);
}

ProbMatrix prob_matrix_from_json(const Json& j) {
  const Json* rows = &j;
  if (j.is_object()) {
    if (!j.contains("rows")) {
      throw Error(ErrorCode::SchemaViolation,
                  "probability input must be an array or {\"rows\": [...]}");
    }
    rows = &j["rows"];
  }
  if (!rows->is_array()) {
    throw Error(ErrorCode::SchemaViolation, "probability rows must be an array");
  }
  ProbMatrix p;
  for (const auto& row : *rows) {
    if (!row.is_array()) {
      throw Error(ErrorCode::SchemaViolation, "each probability row must be an array");
    }
    std::vector<double> r;
    for (const auto& v : row) {
      if (!v.is_number()) {
        throw Error(ErrorCode::SchemaViolation, "probabilities must be numbers");
      }
      r.push_back(v.get<double>());
    }
    p.push_back(std::move(r));
  }
  return p;
}

std::vector<ClusterDistances> clusters_from_json(const Json& j) {
  const Json* clusters = &j;
  if (j.is_object() && j.contains("clusters")) clusters = &j["clusters"];
  std::vector<ClusterDistances> out;
  if (clusters->is_array()) {
    for (const auto& c : *clusters) {
      if (!c.is_object() || !c.contains("distances") ||
          !c["distances"].is_array()) {
        throw Error(ErrorCode::SchemaViolation,
                    "each cluster needs a distances array");
      }
      ClusterDistances cd;
      cd.id = c.contains("id") && c["id"].is_string()
                  ? c["id"].get<std::string>()
                  : std::to_string(out.size());
      for (const auto& v : c["distances"]) {
        if (!v.is_number()) {
          throw Error(ErrorCode::SchemaViolation, "distances must be numbers");
        }
        cd.distances.push_back(v.get<double>());
      }
      out.push_back(std::move(cd));
    }
    return out;
  }
  if (clusters->is_object()) {
    // Also accept {"cluster id": [distances...]} maps.
    for (auto it = clusters->begin(); it != clusters->end(); ++it) {
      if (!it.value().is_array()) {
        throw Error(ErrorCode::SchemaViolation,
                    "cluster '" + it.key() + "' must map to a distance array");
      }
      ClusterDistances cd;
      cd.id = it.key();
      for (const auto& v : it.value()) {
        if (!v.is_number()) {
          throw Error(ErrorCode::SchemaViolation, "distances must be numbers");
        }
        cd.distances.push_back(v.get<double>());
      }
      out.push_back(std::move(cd));
    }
    return out;
  }
  throw Error(ErrorCode::SchemaViolation,
              "cluster input must be an array or an object");
}

}  // namespace anomagent
