#include "advdial/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace advdial {

TrainMode parse_train_mode(const std::string& name) {
  if (name == "reinforce") return TrainMode::kReinforce;
  if (name == "regs_mc") return TrainMode::kRegsMc;
  if (name == "regs_partial") return TrainMode::kRegsPartial;
  throw Error("UnknownTrainMode: " + name);
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kReinforce: return "reinforce";
    case TrainMode::kRegsMc: return "regs_mc";
    case TrainMode::kRegsPartial: return "regs_partial";
  }
  throw Error("UnknownTrainMode");
}

TeacherForcing parse_teacher_forcing(const std::string& name) {
  if (name == "off") return TeacherForcing::kOff;
  if (name == "constant_one") return TeacherForcing::kConstantOne;
  if (name == "gated") return TeacherForcing::kGated;
  throw Error("UnknownTeacherForcing: " + name);
}

std::string teacher_forcing_name(TeacherForcing tf) {
  switch (tf) {
    case TeacherForcing::kOff: return "off";
    case TeacherForcing::kConstantOne: return "constant_one";
    case TeacherForcing::kGated: return "gated";
  }
  throw Error("UnknownTeacherForcing");
}

std::vector<int> target_tokens(const Dialogue& d) {
  std::vector<int> y = d.response;
  y.push_back(Vocab::kEos);
  return y;
}

std::vector<int> strip_eos(const std::vector<int>& y) {
  if (y.size() > 1 && y.back() == Vocab::kEos) {
    return std::vector<int>(y.begin(), y.end() - 1);
  }
  return y;
}

std::vector<int> sample_policy(const GeneratorModel& gen, const Context& x,
                               std::uint64_t seed, std::size_t max_len) {
  Rng rng(derive_seed(seed, {0x706f6cULL}));
  EncodedContext enc = encode_context(gen, x);
  Tensor state = enc.final_state;
  std::vector<int> out;
  int prev = Vocab::kBos;
  while (out.size() < max_len) {
    auto [next_state, probs] = decoder_step(gen, enc, prev, state);
    int tok = static_cast<int>(sample_categorical(probs.values(), rng));
    out.push_back(tok);
    if (tok == Vocab::kEos) break;
    state = next_state;
    prev = tok;
  }
  return out;
}

double mle_step(GeneratorModel& gen, const std::vector<const Dialogue*>& batch,
                const std::vector<double>& example_weights, double lr, double clip_norm) {
  if (batch.empty()) throw Error("EmptyBatch");
  if (example_weights.size() != batch.size()) throw Error("ShapeMismatch");
  auto params = gen.params();
  zero_grads(params);
  Tensor loss = Tensor::scalar(0.0);
  double plain_total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor nll = generator_nll(gen, batch[i]->context, target_tokens(*batch[i]));
    plain_total += nll.item();
    loss = add(loss, mul_scalar(nll, example_weights[i]));
  }
  loss = mul_scalar(loss, 1.0 / static_cast<double>(batch.size()));
  if (!std::isfinite(loss.item())) throw Error("Diverged(mle)");
  backward(loss);
  clip_gradients(params, clip_norm);
  sgd_step(params, lr);
  zero_grads(params);
  return plain_total / static_cast<double>(batch.size());
}

double perplexity(const GeneratorModel& gen, const std::vector<Dialogue>& heldout) {
  if (heldout.empty()) throw Error("EmptyCorpus");
  double total_nll = 0.0;
  std::size_t total_tokens = 0;
  for (const auto& d : heldout) {
    std::vector<int> y = target_tokens(d);
    for (double lp : generator_log_prob(gen, d.context, y)) total_nll -= lp;
    total_tokens += y.size();
  }
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

double apply_policy_gradient(GeneratorModel& gen, const std::vector<RewardTrace>& traces,
                             double lr, double clip_norm, bool clip_advantage) {
  if (traces.empty()) throw Error("EmptyBatch");
  auto params = gen.params();
  zero_grads(params);
  Tensor loss = Tensor::scalar(0.0);
  double adv_total = 0.0;
  std::size_t adv_count = 0;
  for (const auto& trace : traces) {
    if (trace.rewards.size() != trace.y.size() || trace.baselines.size() != trace.y.size())
      throw Error("ShapeMismatch");
    std::vector<double> advantages(trace.y.size());
    for (std::size_t t = 0; t < trace.y.size(); ++t) {
      double a = trace.rewards[t] - trace.baselines[t];
      if (clip_advantage) a = std::clamp(a, -1.0, 1.0);
      advantages[t] = a;
      adv_total += a;
      ++adv_count;
    }
    // maximize sum_t A_t log p -> minimize the negation
    loss = add(loss, mul_scalar(generator_weighted_log_prob(gen, trace.x, trace.y, advantages),
                                -1.0));
  }
  loss = mul_scalar(loss, 1.0 / static_cast<double>(traces.size()));
  if (!std::isfinite(loss.item())) throw Error("Diverged(policy)");
  backward(loss);
  clip_gradients(params, clip_norm);
  sgd_step(params, lr);
  zero_grads(params);
  return adv_total / static_cast<double>(adv_count);
}

double disc_step(DiscriminatorModel& disc, const std::vector<DiscExample>& batch, double lr,
                 double clip_norm) {
  if (batch.empty()) throw Error("EmptyBatch");
  auto params = disc.params();
  zero_grads(params);
  Tensor loss = Tensor::scalar(0.0);
  for (const auto& ex : batch) {
    Tensor q_plus = discriminator_score_t(disc, *ex.x, ex.y);
    Tensor p = ex.human ? q_plus : sub(Tensor::scalar(1.0), q_plus);
    loss = sub(loss, log(p));
  }
  loss = mul_scalar(loss, 1.0 / static_cast<double>(batch.size()));
  if (!std::isfinite(loss.item())) throw Error("Diverged(disc)");
  double value = loss.item();
  backward(loss);
  clip_gradients(params, clip_norm);
  sgd_step(params, lr);
  zero_grads(params);
  return value;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::vector<const Dialogue*> sample_batch(const std::vector<Dialogue>& pool,
                                          std::size_t batch_size, Rng& rng) {
  std::vector<const Dialogue*> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i)
    batch.push_back(&pool[rng.uniform_index(pool.size())]);
  return batch;
}

template <typename Model>
std::vector<std::vector<double>> snapshot_params(const Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& t : m.params()) out.push_back(t.values());
  return out;
}

template <typename Model>
void restore_params(Model& m, const std::vector<std::vector<double>>& snap) {
  auto params = m.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].values() = snap[i];
}

}  // namespace

PretrainResult pretrain_generator(GeneratorModel& gen, const std::vector<Dialogue>& train,
                                  const std::vector<Dialogue>& heldout, const Vocab& vocab,
                                  const TrainerOptions& opts, std::uint64_t seed) {
  auto filtered = filter_min_length(train, opts.min_response_len);
  if (filtered.empty()) throw Error("EmptyCorpus");
  TfidfStats stats = TfidfStats::build(filtered, vocab);
  PretrainResult result;
  result.initial_perplexity = perplexity(gen, heldout);
  Rng order_rng(derive_seed(seed, {0x6f726472ULL}));
  double lr = opts.mle_lr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opts.mle_epochs; ++epoch) {
    auto idx = shuffled_indices(filtered.size(), order_rng);
    for (std::size_t start = 0; start < idx.size(); start += opts.batch_size) {
      std::size_t end = std::min(idx.size(), start + opts.batch_size);
      std::vector<const Dialogue*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&filtered[idx[i]]);
      auto rates = tfidf_weighted_rates(batch, stats, vocab, lr, opts.tfidf_cap);
      std::vector<double> weights(rates.size());
      for (std::size_t i = 0; i < rates.size(); ++i) weights[i] = rates[i] / lr;
      double nll = mle_step(gen, batch, weights, lr, opts.clip_norm);
      if (!std::isfinite(nll)) throw Error("Diverged(" + std::to_string(step) + ")");
      ++step;
    }
    double ppl = perplexity(gen, heldout);
    if (!std::isfinite(ppl)) throw Error("Diverged(" + std::to_string(step) + ")");
    result.heldout_perplexity.push_back(ppl);
    lr *= opts.mle_lr_decay;
  }
  return result;
}

PretrainResult pretrain_language_model(LanguageModel& lm, const std::vector<Dialogue>& train,
                                       const std::vector<Dialogue>& heldout,
                                       const TrainerOptions& opts, std::uint64_t seed) {
  auto filtered = filter_min_length(train, opts.min_response_len);
  if (filtered.empty()) throw Error("EmptyCorpus");
  auto lm_ppl = [&lm](const std::vector<Dialogue>& data) {
    double nll = 0.0;
    std::size_t toks = 0;
    for (const auto& d : data) {
      std::vector<int> y = d.response;
      y.push_back(Vocab::kEos);
      nll += lm_nll(lm, y).item();
      toks += y.size();
    }
    return std::exp(nll / static_cast<double>(toks));
  };
  PretrainResult result;
  result.initial_perplexity = lm_ppl(heldout);
  Rng order_rng(derive_seed(seed, {0x6c6d6f72ULL}));
  auto params = lm.params();
  double lr = opts.mle_lr;
  for (std::size_t epoch = 0; epoch < opts.mle_epochs; ++epoch) {
    auto idx = shuffled_indices(filtered.size(), order_rng);
    for (std::size_t start = 0; start < idx.size(); start += opts.batch_size) {
      std::size_t end = std::min(idx.size(), start + opts.batch_size);
      zero_grads(params);
      Tensor loss = Tensor::scalar(0.0);
      for (std::size_t i = start; i < end; ++i) {
        std::vector<int> y = filtered[idx[i]].response;
        y.push_back(Vocab::kEos);
        loss = add(loss, lm_nll(lm, y));
      }
      loss = mul_scalar(loss, 1.0 / static_cast<double>(end - start));
      if (!std::isfinite(loss.item())) throw Error("Diverged(lm)");
      backward(loss);
      clip_gradients(params, opts.clip_norm);
      sgd_step(params, lr);
      zero_grads(params);
    }
    result.heldout_perplexity.push_back(lm_ppl(heldout));
    lr *= opts.mle_lr_decay;
  }
  return result;
}

std::vector<Dialogue> reverse_dialogues(const std::vector<Dialogue>& dialogues) {
  std::vector<Dialogue> out;
  out.reserve(dialogues.size());
  for (const auto& d : dialogues) {
    Dialogue r;
    r.context = {d.response};
    std::vector<int> target;
    for (const auto& utt : d.context) target.insert(target.end(), utt.begin(), utt.end());
    if (target.empty()) continue;  // nothing to predict backward
    r.response = std::move(target);
    out.push_back(std::move(r));
  }
  return out;
}

DiscPretrainResult pretrain_discriminator(DiscriminatorModel& disc,
                                          const std::vector<Dialogue>& train,
                                          const std::vector<Dialogue>& heldout,
                                          const GeneratorModel& gen,
                                          const GeneratorModel& backward_gen,
                                          const Vocab& vocab, const TrainerOptions& opts,
                                          std::uint64_t seed) {
  if (train.empty() || heldout.empty()) throw Error("EmptyCorpus");
  std::size_t n = std::min(opts.disc_examples, train.size());
  std::size_t n_beam = (n + 1) / 2;
  DiscPretrainResult result;
  result.beam_negatives = n_beam;
  result.sampled_negatives = n - n_beam;

  Rng rng(derive_seed(seed, {0x64707265ULL}));
  // negative responses, half beam+MMI and half sampled
  struct Pair {
    const Dialogue* human;
    std::vector<int> machine;
  };
  std::vector<Pair> pairs;
  pairs.reserve(n);
  auto picks = shuffled_indices(train.size(), rng);
  for (std::size_t i = 0; i < n; ++i) {
    const Dialogue& d = train[picks[i]];
    std::vector<int> machine;
    if (i < n_beam) {
      auto hyps = beam_search(gen, vocab, d.context, opts.disc_decode);
      auto reranked =
          mmi_backward_rerank(hyps, backward_gen, vocab, d.context, opts.disc_decode.mmi_lambda);
      machine = strip_eos(reranked.front().tokens);
    } else {
      machine = strip_eos(sample_decode(gen, vocab, d.context, 1.0,
                                        derive_seed(seed, {0x6e6567ULL, i}),
                                        opts.disc_decode.max_len));
    }
    if (machine.empty()) machine.push_back(Vocab::kEos);
    pairs.push_back({&d, std::move(machine)});
  }

  // held-out machine pairs for the accuracy curve
  std::vector<Pair> ho_pairs;
  std::size_t ho_n = std::min<std::size_t>(heldout.size(), 100);
  for (std::size_t i = 0; i < ho_n; ++i) {
    const Dialogue& d = heldout[i];
    std::vector<int> machine = strip_eos(sample_decode(
        gen, vocab, d.context, 1.0, derive_seed(seed, {0x686f6eULL, i}), opts.disc_decode.max_len));
    if (machine.empty()) machine.push_back(Vocab::kEos);
    ho_pairs.push_back({&d, std::move(machine)});
  }
  auto heldout_accuracy = [&] {
    std::size_t correct = 0, total = 0;
    for (const auto& p : ho_pairs) {
      if (discriminator_score(disc, p.human->context, p.human->response) > 0.5) ++correct;
      if (discriminator_score(disc, p.human->context, p.machine) < 0.5) ++correct;
      total += 2;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
  };

  for (std::size_t epoch = 0; epoch < opts.disc_epochs; ++epoch) {
    auto idx = shuffled_indices(pairs.size(), rng);
    for (std::size_t start = 0; start < idx.size(); start += opts.batch_size) {
      std::size_t end = std::min(idx.size(), start + opts.batch_size);
      std::vector<DiscExample> batch;
      for (std::size_t i = start; i < end; ++i) {
        const Pair& p = pairs[idx[i]];
        batch.push_back({&p.human->context, p.human->response, true});
        batch.push_back({&p.human->context, p.machine, false});
      }
      disc_step(disc, batch, opts.disc_lr, opts.clip_norm);
    }
    result.heldout_accuracy.push_back(heldout_accuracy());
  }
  return result;
}

StepMetrics reinforce_step(GeneratorModel& gen, const DiscriminatorModel& disc,
                           const CriticModel& critic,
                           const std::vector<const Dialogue*>& batch,
                           const TrainerOptions& opts, std::uint64_t seed) {
  StepMetrics m;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Context& x = batch[i]->context;
    std::vector<int> y = sample_policy(gen, x, derive_seed(seed, {0x67736d70ULL, i}), opts.max_len);
    std::vector<int> y_text = strip_eos(y);
    double r = discriminator_score(disc, x, y_text);
    double b = critic_value(critic, x, y_text);
    RewardTrace trace;
    trace.x = x;
    trace.y = y;
    trace.rewards.assign(y.size(), r);
    trace.baselines.assign(y.size(), b);
    trace.mode = TrainMode::kReinforce;
    m.reward_mean += r;
    m.traces.push_back(std::move(trace));
  }
  m.reward_mean /= static_cast<double>(batch.size());
  m.advantage_mean =
      apply_policy_gradient(gen, m.traces, opts.rl_lr, opts.clip_norm, opts.clip_advantage);
  return m;
}

std::vector<double> mc_rollout_rewards_fn(
    const GeneratorModel& gen,
    const std::function<double(const Context&, const std::vector<int>&)>& score,
    const Context& x, const std::vector<int>& y, std::size_t n_rollouts, std::uint64_t seed,
    std::size_t max_len) {
  if (y.empty()) throw Error("EmptyResponse");
  if (n_rollouts < 1) throw Error("InvalidRolloutCount");
  EncodedContext enc = encode_context(gen, x);
  // decoder states after consuming each prefix (teacher-forced walk)
  std::vector<Tensor> states;  // states[t] = state after consuming y[0..t-1]
  states.reserve(y.size() + 1);
  states.push_back(enc.final_state);
  {
    Tensor state = enc.final_state;
    int prev = Vocab::kBos;
    for (int tok : y) {
      auto [next_state, probs] = decoder_step(gen, enc, prev, state);
      state = next_state;
      prev = tok;
      states.push_back(state);
    }
  }
  std::vector<double> rewards(y.size(), 0.0);
  for (std::size_t t = 1; t <= y.size(); ++t) {
    std::vector<int> prefix(y.begin(), y.begin() + static_cast<long>(t));
    if (t == y.size()) {
      rewards[t - 1] = score(x, strip_eos(prefix));
      continue;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n_rollouts; ++i) {
      std::vector<int> completed = prefix;
      Rng rng(derive_seed(seed, {0x726f6cULL, t, i}));
      Tensor state = states[t];
      int prev = y[t - 1];
      while (completed.size() < max_len) {
        auto [next_state, probs] = decoder_step(gen, enc, prev, state);
        int tok = static_cast<int>(sample_categorical(probs.values(), rng));
        completed.push_back(tok);
        if (tok == Vocab::kEos) break;
        state = next_state;
        prev = tok;
      }
      total += score(x, strip_eos(completed));
    }
    rewards[t - 1] = total / static_cast<double>(n_rollouts);
  }
  return rewards;
}

std::vector<double> mc_rollout_rewards(const GeneratorModel& gen,
                                       const DiscriminatorModel& disc, const Context& x,
                                       const std::vector<int>& y, std::size_t n_rollouts,
                                       std::uint64_t seed, std::size_t max_len) {
  return mc_rollout_rewards_fn(
      gen,
      [&disc](const Context& ctx, const std::vector<int>& resp) {
        return discriminator_score(disc, ctx, resp);
      },
      x, y, n_rollouts, seed, max_len);
}

std::pair<std::vector<int>, std::vector<int>> partial_disc_pairs(
    const std::vector<int>& y_plus, const std::vector<int>& y_minus, std::uint64_t seed) {
  if (y_plus.empty() || y_minus.empty()) throw Error("EmptyResponse");
  Rng rng(derive_seed(seed, {0x70646973ULL}));
  std::size_t t_plus = 1 + rng.uniform_index(y_plus.size());
  std::size_t t_minus = 1 + rng.uniform_index(y_minus.size());
  return {std::vector<int>(y_plus.begin(), y_plus.begin() + static_cast<long>(t_plus)),
          std::vector<int>(y_minus.begin(), y_minus.begin() + static_cast<long>(t_minus))};
}

StepMetrics regs_step(GeneratorModel& gen, const DiscriminatorModel& disc,
                      const CriticModel& critic, const std::vector<const Dialogue*>& batch,
                      TrainMode mode, const TrainerOptions& opts, std::uint64_t seed) {
  if (mode == TrainMode::kReinforce) throw Error("UnknownTrainMode: regs expected");
  StepMetrics m;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Context& x = batch[i]->context;
    std::vector<int> y = sample_policy(gen, x, derive_seed(seed, {0x67736d70ULL, i}), opts.max_len);
    RewardTrace trace;
    trace.x = x;
    trace.y = y;
    trace.mode = mode;
    if (mode == TrainMode::kRegsMc) {
      trace.rewards = mc_rollout_rewards(gen, disc, x, y, opts.mc_rollouts,
                                         derive_seed(seed, {0x72677332ULL, i}), opts.max_len);
    } else {
      trace.rewards.resize(y.size());
      for (std::size_t t = 1; t <= y.size(); ++t) {
        std::vector<int> prefix(y.begin(), y.begin() + static_cast<long>(t));
        if (t == y.size()) prefix = strip_eos(prefix);
        trace.rewards[t - 1] = discriminator_score(disc, x, prefix);
      }
    }
    trace.baselines.resize(y.size());
    double mean_r = 0.0;
    for (std::size_t t = 1; t <= y.size(); ++t) {
      std::vector<int> prefix(y.begin(), y.begin() + static_cast<long>(t));
      if (t == y.size()) prefix = strip_eos(prefix);
      trace.baselines[t - 1] = critic_value(critic, x, prefix);
      mean_r += trace.rewards[t - 1];
    }
    m.reward_mean += mean_r / static_cast<double>(y.size());
    m.traces.push_back(std::move(trace));
  }
  m.reward_mean /= static_cast<double>(batch.size());
  m.advantage_mean =
      apply_policy_gradient(gen, m.traces, opts.rl_lr, opts.clip_norm, opts.clip_advantage);
  return m;
}

void teacher_forcing_step(GeneratorModel& gen, const DiscriminatorModel& disc,
                          const CriticModel& critic,
                          const std::vector<const Dialogue*>& human_batch,
                          TeacherForcing mode, const TrainerOptions& opts) {
  if (mode == TeacherForcing::kOff) return;
  std::vector<double> weights(human_batch.size(), 1.0);
  if (mode == TeacherForcing::kGated) {
    bool any_open = false;
    for (std::size_t i = 0; i < human_batch.size(); ++i) {
      const Dialogue& d = *human_batch[i];
      double r = discriminator_score(disc, d.context, d.response);
      double b = critic_value(critic, d.context, d.response);
      weights[i] = r > b ? r - b : 0.0;
      any_open = any_open || weights[i] > 0.0;
    }
    if (!any_open) return;  // every gate closed: no update
  }
  mle_step(gen, human_batch, weights, opts.tf_lr, opts.clip_norm);
}

double critic_step(CriticModel& critic, const std::vector<RewardTrace>& traces, double lr,
                   std::uint64_t seed) {
  if (traces.empty()) throw Error("EmptyBatch");
  auto params = critic.params();
  zero_grads(params);
  Tensor loss = Tensor::scalar(0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const RewardTrace& trace = traces[i];
    auto add_pair = [&](const std::vector<int>& prefix, double r) {
      Tensor b = critic_value_t(critic, trace.x, prefix);
      Tensor diff = sub(b, Tensor::scalar(r));
      loss = add(loss, mul(diff, diff));
      ++count;
    };
    std::vector<int> full = strip_eos(trace.y);
    if (trace.mode == TrainMode::kReinforce) {
      // whole-sequence reward: the full pair plus one sampled prefix
      add_pair(full, trace.rewards.back());
      Rng rng(derive_seed(seed, {0x63726974ULL, i}));
      std::size_t t = 1 + rng.uniform_index(trace.y.size());
      std::vector<int> prefix(trace.y.begin(), trace.y.begin() + static_cast<long>(t));
      if (t == trace.y.size()) prefix = full;
      add_pair(prefix, trace.rewards[t - 1]);
    } else {
      for (std::size_t t = 1; t <= trace.y.size(); ++t) {
        std::vector<int> prefix(trace.y.begin(), trace.y.begin() + static_cast<long>(t));
        if (t == trace.y.size()) prefix = full;
        add_pair(prefix, trace.rewards[t - 1]);
      }
    }
  }
  loss = mul_scalar(loss, 1.0 / static_cast<double>(count));
  double mse = loss.item();
  if (!std::isfinite(mse)) throw Error("Diverged(critic)");
  backward(loss);
  sgd_step(params, lr);
  zero_grads(params);
  return mse;
}

AdvTrainResult adversarial_train(GeneratorModel& gen, DiscriminatorModel& disc,
                                 CriticModel& critic, const std::vector<Dialogue>& train,
                                 const std::vector<Dialogue>& heldout, const Vocab& vocab,
                                 const TrainSchedule& schedule, TrainMode mode,
                                 const TrainerOptions& opts, std::uint64_t seed,
                                 const IterationCallback& on_iteration) {
  (void)vocab;
  if (schedule.d_steps < 1 || schedule.g_steps < 1) throw Error("InvalidSchedule");
  if (train.empty() || heldout.empty()) throw Error("EmptyCorpus");
  AdvTrainResult result;
  std::vector<Dialogue> ppl_set(
      heldout.begin(),
      heldout.begin() + static_cast<long>(std::min(heldout.size(), opts.ppl_eval_examples)));

  auto gen_snap = snapshot_params(gen);
  auto disc_snap = snapshot_params(disc);
  auto critic_snap = snapshot_params(critic);
  double pretrain_ppl = perplexity(gen, ppl_set);

  for (std::size_t iter = 0; iter < schedule.iterations; ++iter) {
    auto started = std::chrono::steady_clock::now();
    IterationMetrics metrics;
    metrics.iteration = iter;
    metrics.seed = seed;
    try {
      // D-steps: fresh negatives sampled from the current policy each step
      for (std::size_t d = 0; d < schedule.d_steps; ++d) {
        Rng batch_rng(derive_seed(seed, {0xd0ULL, iter, d}));
        auto batch = sample_batch(train, schedule.batch_size, batch_rng);
        std::vector<DiscExample> examples;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          std::vector<int> neg = strip_eos(sample_policy(
              gen, batch[i]->context, derive_seed(seed, {0xd1ULL, iter, d, i}), opts.max_len));
          if (neg.empty()) neg.push_back(Vocab::kEos);
          bool use_partial = mode == TrainMode::kRegsPartial && (i % 2 == 1);
          if (use_partial) {
            auto [pos_prefix, neg_prefix] = partial_disc_pairs(
                batch[i]->response, neg, derive_seed(seed, {0xd2ULL, iter, d, i}));
            examples.push_back({&batch[i]->context, pos_prefix, true});
            examples.push_back({&batch[i]->context, neg_prefix, false});
          } else {
            examples.push_back({&batch[i]->context, batch[i]->response, true});
            examples.push_back({&batch[i]->context, neg, false});
          }
        }
        metrics.d_loss = disc_step(disc, examples, opts.disc_lr, opts.clip_norm);
      }
      // G-steps with teacher forcing and a critic update after each
      for (std::size_t g = 0; g < schedule.g_steps; ++g) {
        Rng batch_rng(derive_seed(seed, {0x60ULL, iter, g}));
        auto batch = sample_batch(train, schedule.batch_size, batch_rng);
        StepMetrics step =
            mode == TrainMode::kReinforce
                ? reinforce_step(gen, disc, critic, batch, opts,
                                 derive_seed(seed, {0x61ULL, iter, g}))
                : regs_step(gen, disc, critic, batch, mode, opts,
                            derive_seed(seed, {0x61ULL, iter, g}));
        metrics.g_reward_mean = step.reward_mean;
        teacher_forcing_step(gen, disc, critic, batch, schedule.teacher_forcing, opts);
        metrics.critic_mse =
            critic_step(critic, step.traces, opts.critic_lr, derive_seed(seed, {0x62ULL, iter, g}));
      }
      metrics.perplexity = perplexity(gen, ppl_set);
      if (!std::isfinite(metrics.perplexity)) throw Error("Diverged(ppl)");
    } catch (const Error& e) {
      // restore the last finite iterate and stop
      restore_params(gen, gen_snap);
      restore_params(disc, disc_snap);
      restore_params(critic, critic_snap);
      result.diverged = true;
      result.diverged_at = iter;
      break;
    }
    metrics.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();
    result.metrics.push_back(metrics);
    gen_snap = snapshot_params(gen);
    disc_snap = snapshot_params(disc);
    critic_snap = snapshot_params(critic);
    if (on_iteration) on_iteration(iter);
    (void)pretrain_ppl;
  }
  return result;
}

}  // namespace advdial
