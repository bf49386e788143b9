#pragma once

#include <functional>
#include <string>
#include <vector>

#include "advdial/decode.hpp"
#include "advdial/models.hpp"

namespace advdial {

enum class TrainMode { kReinforce, kRegsMc, kRegsPartial };
enum class TeacherForcing { kOff, kConstantOne, kGated };

TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);
TeacherForcing parse_teacher_forcing(const std::string& name);
std::string teacher_forcing_name(TeacherForcing tf);

// Per-token rewards and baselines for one sampled response.
struct RewardTrace {
  Context x;
  std::vector<int> y;  // sampled tokens, EOS-terminated or truncated
  std::vector<double> rewards;
  std::vector<double> baselines;
  TrainMode mode = TrainMode::kReinforce;
};

struct TrainSchedule {
  std::size_t d_steps = 5;
  std::size_t g_steps = 1;
  TeacherForcing teacher_forcing = TeacherForcing::kConstantOne;
  std::size_t iterations = 200;
  std::size_t batch_size = 16;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
};

struct TrainerOptions {
  ModelDims dims;
  // MLE pretraining
  double mle_lr = 0.5;
  double mle_lr_decay = 0.9;
  std::size_t mle_epochs = 8;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
  double tfidf_cap = 3.0;
  std::size_t min_response_len = 5;
  // discriminator
  double disc_lr = 1.0;
  std::size_t disc_epochs = 8;
  std::size_t disc_examples = 400;  // negatives generated for pretraining
  DecodeConfig disc_decode;         // beam+MMI settings for pretraining negatives
  // reinforcement
  double rl_lr = 0.01;
  bool clip_advantage = false;  // clip A to [-1, 1]
  std::size_t mc_rollouts = 5;
  std::size_t max_len = 20;
  double critic_lr = 0.1;
  double tf_lr = 0.05;
  std::size_t ppl_eval_examples = 64;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  double d_loss = 0.0;
  double g_reward_mean = 0.0;
  double critic_mse = 0.0;
  double perplexity = 0.0;
  long long wall_ms = 0;
  std::uint64_t seed = 0;
};

// ---- shared primitives ----

// Training target: response tokens plus EOS.
std::vector<int> target_tokens(const Dialogue& d);
// Response without a trailing EOS; degenerate {EOS} stays as is so
// discriminator / critic inputs are never empty.
std::vector<int> strip_eos(const std::vector<int>& y);

// Sample a response from the policy itself (the full per-step softmax, unlike
// decode-time sampling which masks PAD/BOS).
std::vector<int> sample_policy(const GeneratorModel& gen, const Context& x,
                               std::uint64_t seed, std::size_t max_len);

// Weighted MLE step: loss = (1/B) sum_i w_i * nll_i, clipped SGD. Returns the
// mean unweighted per-example nll.
double mle_step(GeneratorModel& gen, const std::vector<const Dialogue*>& batch,
                const std::vector<double>& example_weights, double lr, double clip_norm);

// exp(total nll / total target tokens) over a held-out set.
double perplexity(const GeneratorModel& gen, const std::vector<Dialogue>& heldout);

// One policy-gradient step from precomputed traces: surrogate
// -(1/B) sum_i sum_t A_(i,t) log p(y_t | ...). Returns mean advantage.
double apply_policy_gradient(GeneratorModel& gen, const std::vector<RewardTrace>& traces,
                             double lr, double clip_norm, bool clip_advantage);

// Binary cross-entropy step for the discriminator; label true = human.
struct DiscExample {
  const Context* x;
  std::vector<int> y;
  bool human;
};
double disc_step(DiscriminatorModel& disc, const std::vector<DiscExample>& batch, double lr,
                 double clip_norm);

// ---- pretraining ----

struct PretrainResult {
  std::vector<double> heldout_perplexity;  // one entry per epoch, after update
  double initial_perplexity = 0.0;
};

PretrainResult pretrain_generator(GeneratorModel& gen, const std::vector<Dialogue>& train,
                                  const std::vector<Dialogue>& heldout, const Vocab& vocab,
                                  const TrainerOptions& opts, std::uint64_t seed);

PretrainResult pretrain_language_model(LanguageModel& lm, const std::vector<Dialogue>& train,
                                       const std::vector<Dialogue>& heldout,
                                       const TrainerOptions& opts, std::uint64_t seed);

// Swaps each dialogue for backward-model training: the response becomes the
// single context utterance and the concatenated context becomes the target.
std::vector<Dialogue> reverse_dialogues(const std::vector<Dialogue>& dialogues);

struct DiscPretrainResult {
  std::size_t beam_negatives = 0;
  std::size_t sampled_negatives = 0;
  std::vector<double> heldout_accuracy;  // per epoch
};

// Negatives: ceil(n/2) beam-search outputs reranked by mutual information,
// floor(n/2) sampled outputs. Positives are the human pairs.
DiscPretrainResult pretrain_discriminator(DiscriminatorModel& disc,
                                          const std::vector<Dialogue>& train,
                                          const std::vector<Dialogue>& heldout,
                                          const GeneratorModel& gen,
                                          const GeneratorModel& backward_gen,
                                          const Vocab& vocab, const TrainerOptions& opts,
                                          std::uint64_t seed);

// ---- reinforcement steps ----

struct StepMetrics {
  double reward_mean = 0.0;
  double advantage_mean = 0.0;
  std::vector<RewardTrace> traces;
};

// Whole-sequence reward Q+({x,y}) minus baseline b({x,y}) applied to every
// token's log-prob gradient. Does not touch the discriminator.
StepMetrics reinforce_step(GeneratorModel& gen, const DiscriminatorModel& disc,
                           const CriticModel& critic,
                           const std::vector<const Dialogue*>& batch,
                           const TrainerOptions& opts, std::uint64_t seed);

// Per-prefix rewards for y under the discriminator: N rollouts per prefix,
// the final entry scores the finished sequence itself.
std::vector<double> mc_rollout_rewards(const GeneratorModel& gen,
                                       const DiscriminatorModel& disc, const Context& x,
                                       const std::vector<int>& y, std::size_t n_rollouts,
                                       std::uint64_t seed, std::size_t max_len);
// Injectable scorer variant (test seam and shared implementation).
std::vector<double> mc_rollout_rewards_fn(
    const GeneratorModel& gen,
    const std::function<double(const Context&, const std::vector<int>&)>& score,
    const Context& x, const std::vector<int>& y, std::size_t n_rollouts, std::uint64_t seed,
    std::size_t max_len);

// One uniformly chosen prefix from each sequence's prefix set {y_1:t}.
std::pair<std::vector<int>, std::vector<int>> partial_disc_pairs(
    const std::vector<int>& y_plus, const std::vector<int>& y_minus, std::uint64_t seed);

// Per-token advantages A_t = Q+(x, Y_t) - b(x, Y_t); MC mode estimates Q+ by
// rollouts, PARTIAL mode scores prefixes with the discriminator directly.
StepMetrics regs_step(GeneratorModel& gen, const DiscriminatorModel& disc,
                      const CriticModel& critic, const std::vector<const Dialogue*>& batch,
                      TrainMode mode, const TrainerOptions& opts, std::uint64_t seed);

// CONSTANT_ONE: one MLE step on the human batch. GATED: per-example weight
// r - b, applied only when r > b.
void teacher_forcing_step(GeneratorModel& gen, const DiscriminatorModel& disc,
                          const CriticModel& critic,
                          const std::vector<const Dialogue*>& human_batch,
                          TeacherForcing mode, const TrainerOptions& opts);

// One SGD step on mean (b - r)^2 over the traces' realized rewards; trains on
// full sequences plus prefixes. Returns the pre-step MSE.
double critic_step(CriticModel& critic, const std::vector<RewardTrace>& traces, double lr,
                   std::uint64_t seed);

// ---- the adversarial loop ----

struct AdvTrainResult {
  std::vector<IterationMetrics> metrics;
  bool diverged = false;
  std::size_t diverged_at = 0;
  // invoked after every iteration (checkpointing hook)
};

using IterationCallback = std::function<void(std::size_t iteration)>;

// Figure-1 style loop: d_steps discriminator updates on fresh samples, then
// g_steps generator updates (mode-dependent credit assignment), each followed
// by a teacher-forcing update and a critic update. Aborts on divergence,
// restoring the last finite iterate.
AdvTrainResult adversarial_train(GeneratorModel& gen, DiscriminatorModel& disc,
                                 CriticModel& critic, const std::vector<Dialogue>& train,
                                 const std::vector<Dialogue>& heldout, const Vocab& vocab,
                                 const TrainSchedule& schedule, TrainMode mode,
                                 const TrainerOptions& opts, std::uint64_t seed,
                                 const IterationCallback& on_iteration = nullptr);

}  // namespace advdial
