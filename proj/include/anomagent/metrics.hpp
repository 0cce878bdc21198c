#pragma once

#include <string>
#include <vector>

#include "anomagent/protocol.hpp"

// Generation-quality metric formulas over caller-supplied numbers. Feature
// and probability extraction (classifier logits, perceptual distances) is
// upstream: these functions are the exact aggregation formulas only.

namespace anomagent {

// Class-probability rows, one per image; every row must sum to 1 within
// 1e-9 with entries in [0,1].
using ProbMatrix = std::vector<std::vector<double>>;

struct ClusterDistances {
  std::string id;
  std::vector<double> distances;  // pairwise distances between members, >= 0
};

// exp of the mean row-wise divergence from the column-mean distribution,
// natural log, with 0*log(0/q) taken as 0. Throws Error{DegenerateRow} on a
// bad row and Error{ShapeMismatch} on ragged input.
double inception_score(const ProbMatrix& p);

// Mean over non-empty clusters of the mean pairwise distance within the
// cluster. Empty clusters are skipped; if none remain, throws
// Error{NoEligibleCluster}.
double icl(const std::vector<ClusterDistances>& clusters);

ProbMatrix prob_matrix_from_json(const Json& j);
std::vector<ClusterDistances> clusters_from_json(const Json& j);

}  // namespace anomagent
