#include "anomagent/trajectory_builder.hpp"

#include <cmath>
#include <fstream>
#include <optional>

#include "anomagent/error.hpp"
#include "anomagent/rng.hpp"
#include "parallel.hpp"

namespace anomagent {

namespace {

constexpr std::uint64_t kStepCountSalt = 0x6275696C646E5F6EULL;
constexpr std::uint64_t kKrDrawSalt = 0x6B725F64726177ULL;

constexpr double kFirstScore = 0.4;  // synthesized review scores ramp from
constexpr double kFinalScore = 0.9;  // ... to, evenly spaced, then snapped
                                     // to the 0.1 grid the verdicts live on

std::string simple_prompt(const BuildSpec& s) {
  return "Add a subtle hint of " + s.anomaly_type + " to the " + s.item_name +
         ", barely noticeable.";
}

std::string complex_prompt(const BuildSpec& s) {
  return "Add a clearly visible " + s.anomaly_type + " to the " + s.item_name +
         " with detailed texture, leaving the blending imperfect.";
}

// Scores must stay representable as two 0-5 integers summing to 10*score, so
// the even spacing is rounded to the nearest tenth before splitting.
QualityVerdict synthesized_verdict(const BuildSpec& s, int n, int t) {
  const double raw =
      n == 1 ? kFinalScore
             : kFirstScore + (kFinalScore - kFirstScore) *
                                 static_cast<double>(t - 1) /
                                 static_cast<double>(n - 1);
  const int total = static_cast<int>(std::lround(raw * 10.0));
  QualityVerdict v;
  v.location_score = total / 2;
  v.quality_score = total - v.location_score;
  if (t == n) {
    v.review = "Attempt " + std::to_string(t) + ": convincing " +
               s.anomaly_type + " on the " + s.item_name +
               "; placement and blending look right.";
  } else {
    v.review = "Attempt " + std::to_string(t) + ": the " + s.anomaly_type +
               " is visible but not convincing yet; strengthen its texture "
               "and keep the rest of the " + s.item_name + " untouched.";
  }
  return v;
}

void append_call_block(Trajectory& t, std::string thinking, ToolName tool,
                       Json args, Json content) {
  t.segments.push_back(Segment::thinking_of(std::move(thinking)));
  t.segments.push_back(Segment::call_of(tool, std::move(args)));
  t.segments.push_back(Segment::return_of(tool, std::move(content)));
}

}  // namespace

Json BuildSpec::to_json() const {
  Json j = Json::object();
  j["anomaly_image"] = anomaly_image;
  j["item_name"] = item_name;
  j["anomaly_type"] = anomaly_type;
  if (n) {
    j["n"] = *n;
  } else {
    j["n"] = "random";
  }
  j["kr_ratio"] = kr_ratio;
  j["seed"] = seed;
  return j;
}

BuildSpec BuildSpec::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("anomaly_image") ||
      !j.contains("item_name") || !j.contains("anomaly_type")) {
    throw Error(ErrorCode::SchemaViolation,
                "build spec needs anomaly_image/item_name/anomaly_type");
  }
  BuildSpec s;
  s.anomaly_image = j["anomaly_image"].get<std::string>();
  s.item_name = j["item_name"].get<std::string>();
  s.anomaly_type = j["anomaly_type"].get<std::string>();
  if (j.contains("n") && !j["n"].is_null()) {
    if (j["n"].is_string()) {
      if (j["n"].get<std::string>() != "random") {
        throw Error(ErrorCode::SchemaViolation,
                    "build spec n must be 1..3 or \"random\"");
      }
    } else if (j["n"].is_number_integer()) {
      const int n = j["n"].get<int>();
      if (n < 1 || n > 3) {
        throw Error(ErrorCode::SchemaViolation, "build spec n must be 1..3");
      }
      s.n = n;
    } else {
      throw Error(ErrorCode::SchemaViolation,
                  "build spec n must be 1..3 or \"random\"");
    }
  }
  if (j.contains("kr_ratio")) {
    if (!j["kr_ratio"].is_number()) {
      throw Error(ErrorCode::SchemaViolation, "kr_ratio must be a number");
    }
    s.kr_ratio = j["kr_ratio"].get<double>();
    if (s.kr_ratio < 0.0 || s.kr_ratio > 1.0) {
      throw Error(ErrorCode::SchemaViolation, "kr_ratio must be in [0,1]");
    }
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) {
      throw Error(ErrorCode::SchemaViolation, "seed must be an integer");
    }
    s.seed = j["seed"].get<std::uint64_t>();
  }
  return s;
}

std::vector<BuildSpec> read_build_specs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<BuildSpec> specs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json row = Json::parse(line, nullptr, false);
    if (row.is_discarded()) {
      throw Error(ErrorCode::MalformedJson, "bad JSONL row in '" + path + "'");
    }
    specs.push_back(BuildSpec::from_json(row));
  }
  return specs;
}

void write_build_specs(const std::string& path,
                       const std::vector<BuildSpec>& specs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  for (const auto& s : specs) out << s.to_json().dump() << "\n";
}

const char* taxonomy_name(TaxonomyClass c) {
  switch (c) {
    case TaxonomyClass::SingleGeneration: return "single";
    case TaxonomyClass::DualGeneration: return "dual";
    case TaxonomyClass::TripleGeneration: return "triple";
  }
  return "";
}

std::optional<TaxonomyClass> classify_taxonomy(const Trajectory& t) {
  int ig_calls = 0;
  for (const auto& seg : t.segments) {
    if (seg.kind() == SegmentKind::ToolCall && seg.call().name == ToolName::IG) {
      ++ig_calls;
    }
  }
  switch (ig_calls) {
    case 1: return TaxonomyClass::SingleGeneration;
    case 2: return TaxonomyClass::DualGeneration;
    case 3: return TaxonomyClass::TripleGeneration;
    default: return std::nullopt;
  }
}

bool need_kr(int n, int t, double kr_draw, double kr_ratio) {
  if (n < 1 || n > 3 || t < 1 || t > n) {
    throw Error(ErrorCode::ConfigError,
                "need_kr called outside its domain (n=" + std::to_string(n) +
                    ", t=" + std::to_string(t) + ")");
  }
  if (t == n || n == 1) return false;
  if (n == 3) return t == 1;
  return t == 1 && kr_draw < kr_ratio;  // n == 2
}

Trajectory build_trajectory(const BuildSpec& spec, ToolBackend& backend) {
  if (spec.anomaly_image.empty()) {
    throw Error(ErrorCode::ConfigError, "build spec has no anomaly image");
  }
  const int n =
      spec.n ? *spec.n
             : 1 + static_cast<int>(rng::mix(spec.seed ^ kStepCountSalt) % 3);
  const double kr_draw = rng::to_unit(rng::mix(spec.seed ^ kKrDrawSalt));

  Trajectory traj;
  traj.task.item_name = spec.item_name;
  traj.task.anomaly_type = spec.anomaly_type;

  // Step 1: reconstruct the defect-free counterpart; it anchors the registry.
  const std::string normal = backend.reverse_normalize(spec.anomaly_image);
  traj.task.normal_image = normal;
  traj.images = {normal};

  // Step 2: prepare the per-step images. Intermediates are freshly generated
  // imperfect attempts; the last step always lands on the ground-truth
  // anomaly image. A shadow registry keeps minted indices aligned with the
  // slots the transcript will claim.
  std::vector<std::string> step_images(static_cast<std::size_t>(n));
  if (n == 1) {
    step_images[0] = spec.anomaly_image;
  } else {
    Trajectory shadow = traj;
    Json args = Json::object();
    args["prompt"] = simple_prompt(spec);
    args["target_image"] = 1;
    Observation first = backend.invoke(ToolName::IG, args, shadow);
    step_images[0] = first.new_image.value_or(spec.anomaly_image + ".step1");
    shadow.images.push_back(step_images[0]);
    if (n == 3) {
      Json args2 = Json::object();
      args2["prompt"] = complex_prompt(spec);
      args2["target_image"] = 1;
      Observation second = backend.invoke(ToolName::IG, args2, shadow);
      step_images[1] = second.new_image.value_or(spec.anomaly_image + ".step2");
    }
    step_images[static_cast<std::size_t>(n - 1)] = spec.anomaly_image;
  }

  // Step 3, once: draft the editing prompt.
  Json pg_args = Json::object();
  pg_args["image"] = 1;
  pg_args["item_name"] = spec.item_name;
  pg_args["anomaly_type"] = spec.anomaly_type;
  const Observation pg = backend.invoke(ToolName::PG, pg_args, traj);
  append_call_block(traj,
                    "Draft an editing prompt for a " + spec.anomaly_type +
                        " on the " + spec.item_name + ".",
                    ToolName::PG, pg_args, pg.payload.content);
  std::string prompt = pg.payload.content.at("prompt").get<std::string>();

  // Step 3, per step: generate, evaluate, optionally retrieve.
  bool used_kr = false;
  for (int t = 1; t <= n; ++t) {
    Json ig_args = Json::object();
    ig_args["prompt"] = prompt;
    ig_args["target_image"] = 1;
    const std::int64_t new_index = traj.image_count() + 1;
    traj.images.push_back(step_images[static_cast<std::size_t>(t - 1)]);
    Json ig_content = Json::object();
    ig_content["new_image_index"] = new_index;
    append_call_block(traj,
                      t == 1 ? std::string("Generate a candidate image with "
                                           "the drafted prompt.")
                             : std::string("Generate attempt ") +
                                   std::to_string(t) + " with the refined prompt.",
                      ToolName::IG, std::move(ig_args), std::move(ig_content));

    const QualityVerdict verdict = synthesized_verdict(spec, n, t);
    Json qe_args = Json::object();
    qe_args["anomaly_image"] = new_index;
    qe_args["item_name"] = spec.item_name;
    qe_args["anomaly_type"] = spec.anomaly_type;
    append_call_block(traj,
                      "Assess placement and realism of image " +
                          std::to_string(new_index) + ".",
                      ToolName::QE, std::move(qe_args), verdict.to_content());

    if (t < n) {
      prompt += " Reviewer feedback: " + verdict.review;
      if (need_kr(n, t, kr_draw, spec.kr_ratio)) {
        used_kr = true;
        Json kr_args = Json::object();
        kr_args["item_name"] = spec.item_name;
        kr_args["anomaly_type"] = spec.anomaly_type;
        const Observation kr = backend.invoke(ToolName::KR, kr_args, traj);
        append_call_block(traj,
                          "Consult domain knowledge about " + spec.anomaly_type +
                              " on " + spec.item_name + " before retrying.",
                          ToolName::KR, kr_args, kr.payload.content);
        prompt += " Domain knowledge: " +
                  kr.payload.content.at("knowledge").get<std::string>();
      }
    }
  }

  // Step 4: extract the mask for the accepted image.
  const std::int64_t final_index = traj.image_count();
  Json mg_args = Json::object();
  mg_args["anomaly_image"] = final_index;
  const Observation mg = backend.invoke(ToolName::MG, mg_args, traj);
  append_call_block(traj, "Extract the defect mask for the accepted image.",
                    ToolName::MG, mg_args, mg.payload.content);

  // Step 5: close with the summary answer.
  traj.segments.push_back(Segment::thinking_of("Summarize and finish."));
  AnswerPayload answer;
  answer.status = "success";
  answer.final_image_index = final_index;
  answer.mask_generated = true;
  answer.synthesis_logic =
      "Drafted an editing prompt, generated " + std::to_string(n) +
      " candidate(s), evaluated each" +
      (used_kr ? std::string(", consulted domain knowledge") : std::string()) +
      ", and extracted the final mask.";
  traj.segments.push_back(Segment::answer_of(std::move(answer)));
  return traj;
}

void verify_replayable(const Trajectory& t) {
  if (!check_format(t)) {
    throw Error(ErrorCode::SchemaViolation, "trajectory is not format-valid");
  }
  if (t.images.empty() || t.images.front() != t.task.normal_image) {
    throw Error(ErrorCode::SchemaViolation,
                "registry must start at the task's base image");
  }
  std::int64_t live = 1;  // images visible so far during replay
  for (std::size_t i = 0; i < t.segments.size(); ++i) {
    const Segment& seg = t.segments[i];
    if (seg.kind() == SegmentKind::ToolCall) {
      const Json& args = seg.call().arguments;
      for (const char* field : {"image", "target_image", "anomaly_image"}) {
        if (args.contains(field)) {
          const std::int64_t index = args.at(field).get<std::int64_t>();
          if (index < 1 || index > live) {
            throw Error(ErrorCode::SchemaViolation,
                        std::string(field) + " " + std::to_string(index) +
                            " not yet in registry at segment " +
                            std::to_string(i));
          }
        }
      }
    } else if (seg.kind() == SegmentKind::ToolReturn &&
               seg.tool_return().tool == ToolName::IG) {
      const std::int64_t index =
          seg.tool_return().content.at("new_image_index").get<std::int64_t>();
      if (index != live + 1) {
        throw Error(ErrorCode::SchemaViolation,
                    "generation returned index " + std::to_string(index) +
                        " but the registry held " + std::to_string(live));
      }
      ++live;
    }
  }
  if (live != t.image_count()) {
    throw Error(ErrorCode::SchemaViolation,
                "registry has " + std::to_string(t.image_count()) +
                    " entries but the transcript yields " + std::to_string(live));
  }
}

DatasetStats build_dataset(const std::vector<BuildSpec>& specs,
                           const BackendFactory& factory,
                           const std::string& out_path, int jobs) {
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + out_path + "' for writing");
  }

  struct Slot {
    std::optional<Trajectory> trajectory;
    std::string error;
  };
  std::vector<Slot> slots(specs.size());
  detail::parallel_for(specs.size(), jobs, [&](std::size_t i) {
    try {
      auto backend = factory.make(specs[i].seed);
      slots[i].trajectory = build_trajectory(specs[i], *backend);
    } catch (const Error& e) {
      slots[i].error = e.what();
    } catch (const std::exception& e) {
      slots[i].error = e.what();
    }
  });

  DatasetStats stats;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].trajectory) {
      ++stats.failures;
      stats.failure_messages.push_back("spec " + std::to_string(i) + ": " +
                                       slots[i].error);
      continue;
    }
    const Trajectory& traj = *slots[i].trajectory;
    out << trajectory_to_json(traj).dump() << "\n";
    ++stats.total;
    bool has_kr = false;
    for (const auto& seg : traj.segments) {
      if (seg.kind() == SegmentKind::ToolCall &&
          seg.call().name == ToolName::KR) {
        has_kr = true;
      }
    }
    if (has_kr) ++stats.with_kr;
    const auto cls = classify_taxonomy(traj);
    if (cls == TaxonomyClass::SingleGeneration) ++stats.singles;
    if (cls == TaxonomyClass::DualGeneration) {
      ++stats.duals;
      if (has_kr) ++stats.dual_with_kr;
    }
    if (cls == TaxonomyClass::TripleGeneration) ++stats.triples;
  }
  return stats;
}

Json DatasetStats::to_json() const {
  Json j = Json::object();
  j["total"] = total;
  Json by_class = Json::object();
  by_class["single"] = singles;
  by_class["dual"] = duals;
  by_class["triple"] = triples;
  j["by_class"] = by_class;
  j["with_kr"] = with_kr;
  j["dual_with_kr"] = dual_with_kr;
  if (duals > 0) {
    j["kr_rate_dual"] = static_cast<double>(dual_with_kr) / duals;
  }
  j["failures"] = failures;
  j["failure_messages"] = failure_messages;
  return j;
}

std::vector<std::uint8_t> sft_target_mask(const Trajectory& t) {
  if (!check_format(t)) {
    throw Error(ErrorCode::SchemaViolation,
                "supervision mask requires a format-valid trajectory");
  }
  std::vector<std::uint8_t> mask;
  mask.reserve(t.segments.size());
  for (const auto& seg : t.segments) {
    mask.push_back(seg.kind() == SegmentKind::ToolReturn ? 0 : 1);
  }
  return mask;
}

}  // namespace anomagent
