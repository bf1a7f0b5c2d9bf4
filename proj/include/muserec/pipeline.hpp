#ifndef MUSEREC_PIPELINE_HPP
#define MUSEREC_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "muserec/acoustic.hpp"
#include "muserec/checkpoint.hpp"
#include "muserec/embed.hpp"
#include "muserec/eval.hpp"
#include "muserec/fusion.hpp"
#include "muserec/ingest.hpp"
#include "muserec/sessions.hpp"

namespace muserec {

/// What a variant name means: which architecture, where the track table
/// comes from, and which side channels are switched on.
struct VariantSpec {
  std::string name;
  BaselineMode baseline = BaselineMode::ann;
  std::string track_provenance;  // "random" | "lsa" | "cbow"
  bool acoustic = false;
  bool lyrics = false;
  bool tags = false;
};

const std::vector<std::string>& variant_names();
VariantSpec parse_variant(const std::string& name);

/// One declarative description of a run. Stage commands read only the parts
/// they need; a single seed fans out to per-stage streams so any stage can
/// be re-run alone and reproduce itself.
struct RunConfig {
  std::string work_dir = "muserec-work";

  // Input artifacts. Empty paths fall back to the synthetic outputs under
  // <work_dir>/data; an explicitly given path must exist.
  std::string events_path;
  std::string acoustic_path;
  std::string lyrics_path;
  std::string tags_path;
  std::string metadata_path;

  std::string variant = "annw";
  std::uint64_t seed = 1;
  std::vector<std::size_t> ks = default_ks();
  bool macro_average = false;
  bool cohorts = false;          // add per-cohort rows to eval reports
  std::size_t cohort_top_n = 0;  // 0 keeps every cohort member
  bool strict_parse = false;     // malformed event records: throw vs skip

  ModelConfig model;
  CbowConfig cbow;  // dim is forced to model.embed_dim at prepare time
  VaeConfig vae;    // latent_dim likewise
  std::size_t vae_epochs = 30;
  SyntheticConfig synth;  // seed is overridden by the global seed

  std::string data_dir() const { return work_dir + "/data"; }
  std::string prepared_dir() const { return work_dir + "/prepared"; }
  std::string checkpoints_dir() const { return work_dir + "/checkpoints"; }
  std::string reports_dir() const { return work_dir + "/reports"; }
  std::string checkpoint_path(const std::string& variant_name) const {
    return checkpoints_dir() + "/" + variant_name + ".ckpt";
  }

  // Explicit path, else the synthetic default location.
  std::string events() const;
  std::string acoustic() const;
  std::string lyrics() const;
  std::string tags() const;
  std::string metadata() const;
};

/// `key = value` lines, `#` comments. Keys are the CLI flag spellings; values
/// REPLACE whatever the flags set, so a config file pins a run exactly.
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);
void apply_config_file(RunConfig& config, const std::string& path);

/// Comma-separated cutoffs ("10,20,50").
std::vector<std::size_t> parse_ks(const std::string& text);

struct SynthResult {
  SyntheticDataset dataset;
  DatasetStats stats;
  std::string stats_table;
};

/// Generates the synthetic dataset under <work_dir>/data and summarizes it.
SynthResult run_synth(const RunConfig& config);

struct PreparedArtifacts {
  std::string vocab_hash;
  DatasetStats stats;
  // artifact name -> "built <path>" | "cached <path>" | "skipped (<why>)"
  std::vector<std::pair<std::string, std::string>> artifacts;
  std::string manifest_path;
  std::vector<std::string> warnings;
};

/// Sessions, vocabulary, and every embedding table the configured variant
/// needs (plus any other modality whose file is present). Tables are cached
/// under <work_dir>/prepared keyed by the vocabulary hash; a rerun with
/// unchanged inputs reuses them instead of retraining.
PreparedArtifacts run_prepare(const RunConfig& config);

struct TrainResult {
  std::string label;
  std::string checkpoint_path;
  std::string loss_curve_path;
  std::vector<double> epoch_losses;
};

/// Trains config.variant on the prepared artifacts and writes the checkpoint
/// plus a {"epoch", "loss"} JSONL curve.
TrainResult run_train(const RunConfig& config);

struct EvalResult {
  std::vector<HitRatioReport> reports;
  std::string table;
  std::string table_path;
  std::string jsonl_path;
};

/// Scores checkpoints (all of <work_dir>/checkpoints/*.ckpt when the list is
/// empty) on the test split, with optional cohort rows, and writes the table
/// and record forms under <work_dir>/reports.
EvalResult run_eval(const RunConfig& config, const std::vector<std::string>& checkpoint_paths = {});

/// Re-renders a saved record file (default: the last eval's) as the table.
std::string run_report(const RunConfig& config, const std::string& jsonl_path = "");

}  // namespace muserec

#endif
