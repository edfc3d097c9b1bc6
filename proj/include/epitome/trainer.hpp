#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "epitome/autodiff.hpp"
#include "epitome/encoder.hpp"
#include "epitome/ingest.hpp"
#include "epitome/param_store.hpp"
#include "epitome/tasks.hpp"

namespace epitome::trainer {

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t max_steps = 1000;
  /// ALM steps run by the `train` command before fine-tuning; 0 skips pretraining.
  std::size_t pretrain_steps = 1000;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double margin = tasks::kDefaultMargin;
  bool toy = false;
  bool paper_literal_jcs = false;
  /// Steps between validations; 0 disables validation and early stopping.
  std::size_t eval_every = 50;
  /// Cap on validation records (fine-tuning) or samples per task (pretraining).
  std::size_t max_valid = 256;
  std::size_t cdi_window = 2;
  std::size_t negatives_per_positive = 1;
  double mask_ratio = 0.15;
  encoder::EncoderConfig model;

  void validate() const;
  /// Flat key=value text; encoder keys are accepted alongside trainer keys and
  /// `toy=1` starts the model from the toy configuration.
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Per-step generator: batches and dropout masks depend only on (seed, step).
std::uint64_t step_seed(std::uint64_t seed, std::size_t step);

// ---- optimizer ----------------------------------------------------------------------

/// One Adam update (step counts from 1), then zeroes every gradient.
void adam_step(ParamStore& params, const TrainConfig& config, std::size_t step);

// ---- gradient check ----------------------------------------------------------------------

using LossFn = std::function<ad::Var(ad::Tape&, const ParamStore&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_coords = 500;
  std::uint64_t seed = 0;
  /// Coordinates whose +eps and -eps evaluations take different relu/max
  /// branches are reported as kinks instead of compared.
  bool skip_kinks = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double loss = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences on up to max_coords coordinates of the parameters the
/// loss touches. Relative error = |a - n| / max(|a|, |n|, 1e-12). When
/// `analytic_override` is set it replaces the backward pass.
GradCheckResult grad_check(const LossFn& loss_fn, ParamStore& params, const GradCheckOptions& options = {},
                           const std::function<void(ParamStore&)>& analytic_override = {});

/// Small toy model and inputs exercising every loss path.
struct GradCheckFixture {
  encoder::EncoderConfig config;
  encoder::AsmVocabulary asm_vocab;
  tasks::NameVocabulary names;
  std::vector<ingest::FunctionRecord> records;
  std::vector<std::vector<int>> labels;
  std::vector<tasks::TrainTriplet> triplets;
  std::vector<encoder::AlmSample> infill;
  std::vector<encoder::AlmSample> cdi;
  std::vector<encoder::AlmSample> dui;
  ParamStore params;
  double margin = tasks::kDefaultMargin;
  double literal_margin = 0.01;
};

GradCheckFixture make_gradcheck_fixture(std::uint64_t seed = 3);

inline const std::vector<std::string>& loss_paths() {
  static const std::vector<std::string> paths = {"infill", "cdi", "dui", "jcg", "jcs", "jcs-literal", "joint"};
  return paths;
}

LossFn loss_path(const GradCheckFixture& fixture, const std::string& path);

// ---- checkpoints -------------------------------------------------------------------------

struct TrainState {
  std::string phase = "none";
  std::size_t step = 0;
  double best_metric = 0.0;
  std::size_t best_step = 0;
  std::size_t bad_evals = 0;
  bool operator==(const TrainState&) const = default;
};

/// A directory: manifest.txt + params.bin (parameters and Adam moments),
/// config.txt, asm_vocab.tsv, optional name_vocab.tsv, train_state.txt.
struct Checkpoint {
  ParamStore params;
  TrainConfig config;
  encoder::AsmVocabulary asm_vocab;
  std::optional<tasks::NameVocabulary> name_vocab;
  TrainState state;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

// ---- pretraining -----------------------------------------------------------------------------

struct PretrainData {
  std::vector<encoder::AlmSample> infill;
  std::vector<encoder::AlmSample> cdi;
  std::vector<encoder::AlmSample> dui;
  /// Originating record id per sample, parallel to each task list.
  std::vector<std::string> infill_ids;
  std::vector<std::string> cdi_ids;
  std::vector<std::string> dui_ids;

  std::size_t size() const { return infill.size() + cdi.size() + dui.size(); }
};

/// Samples for the three tasks from normalized records, seeded per record.
PretrainData build_pretrain_data(const std::vector<ingest::FunctionRecord>& records, const TrainConfig& config);

struct TaskLoss {
  std::size_t step = 0;
  std::string task;
  double loss = 0.0;
};

struct PretrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<TaskLoss> train_log;
  std::vector<std::pair<std::size_t, double>> valid_log;
  std::set<std::string> gradient_record_ids;
  std::size_t gradient_steps = 0;
};

/// Strict round-robin over the non-empty task streams until config.max_steps.
/// Validation loss picks the best checkpoint. When `resume` is given, training
/// continues from its state.step with its parameters and optimizer moments.
/// When `out_dir` is non-empty, `best/` and `last/` are written there.
PretrainResult pretrain_alm(const PretrainData& train, const PretrainData& valid, const encoder::AsmVocabulary& vocab,
                            const TrainConfig& config, const std::filesystem::path& out_dir = {},
                            const Checkpoint* resume = nullptr);

// ---- multi-task fine-tuning -------------------------------------------------------------------

enum class Ablation { none, no_pretrain, no_similarity };
Ablation parse_ablation(const std::string& s);

struct MultitaskData {
  std::vector<ingest::FunctionRecord> train;
  std::vector<ingest::FunctionRecord> valid;
  /// Preprocessed name labels per record id.
  std::map<std::string, std::vector<std::string>> labels;
};

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double j_cg = 0.0;
  double j_cs = 0.0;
};

struct MultitaskResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<StepLog> train_log;
  std::vector<std::pair<std::size_t, double>> valid_f1;
  bool early_stopped = false;
  std::size_t steps_run = 0;
  std::set<std::string> gradient_record_ids;
};

/// Throws if `vocab` holds a label that never occurs in the training labels.
void check_vocabulary_leakage(const tasks::NameVocabulary& vocab, const MultitaskData& data);

MultitaskResult train_multitask(const MultitaskData& data, const TrainConfig& config,
                                const Checkpoint* alm_checkpoint = nullptr, Ablation ablation = Ablation::none,
                                const tasks::NameVocabulary* vocab = nullptr,
                                const std::filesystem::path& out_dir = {});

// ---- evaluation helpers ---------------------------------------------------------------------------

/// Greedy predictions in eval mode.
std::vector<std::vector<std::string>> predict_names(const Checkpoint& ckpt,
                                                    const std::vector<ingest::FunctionRecord>& records,
                                                    std::size_t max_len, std::size_t jobs = 1);

/// Eval-mode Score between two records.
double similarity(const Checkpoint& ckpt, const ingest::FunctionRecord& a, const ingest::FunctionRecord& b);

/// Mean f_pos and f_neg over `count` triplets sampled from `records`.
std::pair<double, double> mean_triplet_scores(const Checkpoint& ckpt, const std::vector<ingest::FunctionRecord>& records,
                                              const std::map<std::string, std::vector<std::string>>& labels,
                                              std::size_t count, std::uint64_t seed);

/// Mean teacher-forced J_cg over records, eval mode.
double mean_name_loss(const Checkpoint& ckpt, const std::vector<ingest::FunctionRecord>& records,
                      const std::map<std::string, std::vector<std::string>>& labels);

}  // namespace epitome::trainer
