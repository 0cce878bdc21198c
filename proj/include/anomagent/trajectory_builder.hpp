#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anomagent/protocol.hpp"
#include "anomagent/tools.hpp"

// Constructs structured fine-tuning trajectories from real anomaly-image
// references: reconstruct the defect-free counterpart, prepare N-step
// intermediate attempts (the final step's image is always the ground-truth
// anomaly image), then emit a complete tagged transcript — one prompt draft,
// N generate/evaluate rounds with optional knowledge retrieval between them,
// a mask extraction, and a closing answer.

namespace anomagent {

struct BuildSpec {
  std::string anomaly_image;
  std::string item_name;
  std::string anomaly_type;
  std::optional<int> n;    // 1..3; empty means: sample from seed
  double kr_ratio = 0.5;   // chance an eligible two-step build retrieves
  std::uint64_t seed = 0;

  Json to_json() const;
  static BuildSpec from_json(const Json& j);
};

std::vector<BuildSpec> read_build_specs(const std::string& path);
void write_build_specs(const std::string& path, const std::vector<BuildSpec>& specs);

enum class TaxonomyClass { SingleGeneration, DualGeneration, TripleGeneration };

const char* taxonomy_name(TaxonomyClass c);

// Classifies by generation count: 1, 2, or 3 image-generation calls map to
// the three classes; anything else does not classify.
std::optional<TaxonomyClass> classify_taxonomy(const Trajectory& t);

// Retrieval gate for a build with n total steps, evaluated after step t's
// review (1 <= t <= n): never on the last step, never for single-step
// builds; three-step builds retrieve exactly after step 1; two-step builds
// retrieve after step 1 with probability kr_ratio, decided by kr_draw.
bool need_kr(int n, int t, double kr_draw, double kr_ratio);

// Runs the five build steps against the backend. Deterministic given
// (spec, backend state); the output passes check_format and classifies to
// the class matching n.
Trajectory build_trajectory(const BuildSpec& spec, ToolBackend& backend);

// Structural replay check: the transcript must be format-valid, every tool
// call followed by its matching return, image indices consistent with a
// registry that starts at the task image and grows by one per generation
// return, and all referenced indices resolvable at call time. Throws
// Error{SchemaViolation} describing the first violation.
void verify_replayable(const Trajectory& t);

struct DatasetStats {
  int total = 0;  // successfully built trajectories
  int singles = 0;
  int duals = 0;
  int triples = 0;
  int with_kr = 0;       // trajectories containing a retrieval call
  int dual_with_kr = 0;  // retrieval among two-step builds
  int failures = 0;
  std::vector<std::string> failure_messages;

  Json to_json() const;
};

// Builds every spec (fresh backend per spec, seeded from the spec), writes
// the successes as JSONL in spec order, and reports stats; per-spec failures
// are recorded, never fatal. Builds run across up to `jobs` threads; the
// writer keeps spec order regardless.
DatasetStats build_dataset(const std::vector<BuildSpec>& specs,
                           const BackendFactory& factory,
                           const std::string& out_path, int jobs = 1);

// Supervision flags per segment: assistant-authored segments (thinking, tool
// calls, the answer) are supervised targets; environment-authored returns
// are context only. Requires a format-valid trajectory.
std::vector<std::uint8_t> sft_target_mask(const Trajectory& t);

}  // namespace anomagent
