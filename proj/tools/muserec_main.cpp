#include <cstdlib>
#include <deque>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "muserec/pipeline.hpp"

namespace {

/// Flags funnel through the same key=value channel as config files, so both
/// share one parser and the file can override any flag.
struct RunState {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string config_path;

  muserec::RunConfig build() const {
    muserec::RunConfig config;
    if (const char* env = std::getenv("MUSEREC_WORK_DIR")) config.work_dir = env;
    for (const auto& [key, value] : entries) muserec::apply_config_entry(config, key, value);
    if (!config_path.empty()) muserec::apply_config_file(config, config_path);
    return config;
  }
};

void add_run_options(CLI::App* cmd, RunState& state) {
  static const std::vector<std::pair<const char*, const char*>> value_keys = {
      {"work-dir", "artifact directory (default muserec-work; env MUSEREC_WORK_DIR)"},
      {"events", "listening events file (tsv)"},
      {"acoustic", "acoustic features file (csv)"},
      {"lyrics", "lyric vectors file"},
      {"tags", "tag vectors file"},
      {"metadata", "user metadata file (csv)"},
      {"variant", "model variant (gru4rec, ann, ann-lsa, annw, annw+acoustic, ...)"},
      {"seed", "global seed; stages derive their own streams from it"},
      {"ks", "comma-separated ranking cutoffs (default 10,20,30,40,50)"},
      {"cohort-top-n", "keep only the N highest-scoring members per cohort"},
      {"embed-dim", "embedding width"},
      {"gru-hidden", "recurrent state width"},
      {"fusion-hidden", "fusion layer width"},
      {"dropout", "embedding dropout probability"},
      {"lr", "model learning rate"},
      {"batch", "training batch size"},
      {"epochs", "training epochs"},
      {"leaky-slope", "negative slope of the fusion activation"},
      {"cbow-window", "track-embedding context window"},
      {"cbow-negative", "negative samples per center"},
      {"cbow-epochs", "track-embedding epochs"},
      {"cbow-lr", "track-embedding initial learning rate"},
      {"cbow-min-count", "minimum plays for a track to train"},
      {"vae-hidden", "acoustic encoder hidden width"},
      {"vae-kl-weight", "acoustic KL weight"},
      {"vae-lr", "acoustic learning rate"},
      {"vae-batch", "acoustic batch size"},
      {"vae-epochs", "acoustic training epochs"},
      {"synth-users", "synthetic user count"},
      {"synth-clusters", "synthetic catalogue clusters"},
      {"synth-tracks-per-cluster", "tracks per cluster"},
      {"synth-beta", "cluster self-transition probability"},
      {"synth-sessions-per-user", "sessions per user"},
      {"synth-len-min", "shortest session"},
      {"synth-len-max", "longest session"},
      {"synth-at-risk-fraction", "fraction of users with elevated repetition"},
      {"synth-repeat-boost", "repeat probability for the elevated cohort"},
      {"synth-base-repeat", "repeat probability for everyone else"},
      {"synth-lyric-coverage", "fraction of tracks with lyric vectors"},
      {"synth-tag-coverage", "fraction of tracks with tag vectors"},
      {"synth-lyric-dim", "raw lyric vector width"},
      {"synth-tag-dim", "raw tag vector width"},
  };
  for (const auto& [key, help] : value_keys) {
    const std::string name = key;
    cmd->add_option_function<std::string>(
        "--" + name,
        [&state, name](const std::string& value) { state.entries.emplace_back(name, value); },
        help);
  }
  static const std::vector<std::pair<const char*, const char*>> flag_keys = {
      {"macro", "average per-user hit ratios instead of pooling events"},
      {"cohorts", "add per-cohort rows (needs user metadata)"},
      {"strict", "treat malformed event records as errors"},
  };
  for (const auto& [key, help] : flag_keys) {
    const std::string name = key;
    cmd->add_flag_callback(
        "--" + name, [&state, name] { state.entries.emplace_back(name, "true"); }, help);
  }
  cmd->add_option("--config", state.config_path,
                  "key = value file; its settings override the flags above");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential music recommender: session extraction, multimodal track\n"
               "embeddings, an attentive fusion network, and hit-ratio evaluation."};
  app.require_subcommand(1);
  std::deque<RunState> states;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset into the work dir");
  auto& synth_state = states.emplace_back();
  add_run_options(synth, synth_state);
  synth->callback([&synth_state] {
    const auto result = muserec::run_synth(synth_state.build());
    std::cout << result.stats_table;
    std::cout << "events:   " << result.dataset.events_path << "\n"
              << "acoustic: " << result.dataset.acoustic_path << "\n"
              << "lyrics:   " << result.dataset.lyrics_path << "\n"
              << "tags:     " << result.dataset.tags_path << "\n"
              << "metadata: " << result.dataset.metadata_path << "\n";
  });

  auto* prepare =
      app.add_subcommand("prepare", "sessions, vocabulary, and pretrained embedding tables");
  auto& prepare_state = states.emplace_back();
  add_run_options(prepare, prepare_state);
  prepare->callback([&prepare_state] {
    const auto result = muserec::run_prepare(prepare_state.build());
    for (const auto& warning : result.warnings) std::cerr << "warning: " << warning << "\n";
    std::cout << muserec::render_stats_table(result.stats);
    std::cout << "vocabulary hash " << result.vocab_hash << "\n";
    for (const auto& [name, status] : result.artifacts)
      std::cout << name << ": " << status << "\n";
    std::cout << "manifest: " << result.manifest_path << "\n";
  });

  auto* train = app.add_subcommand("train", "train one variant on the prepared artifacts");
  auto& train_state = states.emplace_back();
  add_run_options(train, train_state);
  train->callback([&train_state] {
    const auto result = muserec::run_train(train_state.build());
    for (std::size_t i = 0; i < result.epoch_losses.size(); ++i) {
      std::cout << "epoch " << i + 1 << "/" << result.epoch_losses.size() << "  loss "
                << result.epoch_losses[i] << "\n";
    }
    std::cout << "checkpoint: " << result.checkpoint_path << "\n"
              << "loss curve: " << result.loss_curve_path << "\n";
  });

  auto* eval = app.add_subcommand("eval", "score checkpoints on the held-out sessions");
  auto& eval_state = states.emplace_back();
  add_run_options(eval, eval_state);
  std::vector<std::string> checkpoints;
  eval->add_option("--checkpoint", checkpoints,
                   "checkpoint file (repeatable; default: all in the work dir)");
  eval->callback([&eval_state, &checkpoints] {
    const auto result = muserec::run_eval(eval_state.build(), checkpoints);
    std::cout << result.table;
    std::cout << "table:   " << result.table_path << "\n"
              << "records: " << result.jsonl_path << "\n";
  });

  auto* report = app.add_subcommand("report", "re-render saved evaluation records as a table");
  auto& report_state = states.emplace_back();
  add_run_options(report, report_state);
  std::string report_input;
  report->add_option("--input", report_input, "records file (default: the last eval's)");
  report->callback([&report_state, &report_input] {
    std::cout << muserec::run_report(report_state.build(), report_input);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const muserec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
