#include "advdial/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace advdial {

EvaluatorKind parse_evaluator_kind(const std::string& name) {
  if (name == "unigram_linear") return EvaluatorKind::kUnigramLinear;
  if (name == "concat_neural") return EvaluatorKind::kConcatNeural;
  if (name == "hier_neural") return EvaluatorKind::kHierNeural;
  if (name == "combined_linear") return EvaluatorKind::kCombinedLinear;
  throw Error("UnknownEvaluatorKind: " + name);
}

std::string evaluator_kind_name(EvaluatorKind kind) {
  switch (kind) {
    case EvaluatorKind::kUnigramLinear: return "unigram_linear";
    case EvaluatorKind::kConcatNeural: return "concat_neural";
    case EvaluatorKind::kHierNeural: return "hier_neural";
    case EvaluatorKind::kCombinedLinear: return "combined_linear";
  }
  throw Error("UnknownEvaluatorKind");
}

ScenarioKind parse_scenario_kind(const std::string& name) {
  if (name == "human_vs_human") return ScenarioKind::kHumanVsHuman;
  if (name == "machine_vs_machine") return ScenarioKind::kMachineVsMachine;
  if (name == "human_vs_random") return ScenarioKind::kHumanVsRandom;
  if (name == "human_vs_next") return ScenarioKind::kHumanVsNext;
  throw Error("UnknownScenarioKind: " + name);
}

std::string scenario_kind_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kHumanVsHuman: return "human_vs_human";
    case ScenarioKind::kMachineVsMachine: return "machine_vs_machine";
    case ScenarioKind::kHumanVsRandom: return "human_vs_random";
    case ScenarioKind::kHumanVsNext: return "human_vs_next";
  }
  throw Error("UnknownScenarioKind");
}

EvaluatorSpec EvaluatorSpec::standard(EvaluatorKind kind) {
  EvaluatorSpec spec;
  spec.kind = kind;
  switch (kind) {
    case EvaluatorKind::kUnigramLinear:
      spec.use_unigram = true;
      break;
    case EvaluatorKind::kConcatNeural:
    case EvaluatorKind::kHierNeural:
      spec.use_neural = true;
      break;
    case EvaluatorKind::kCombinedLinear:
      spec.use_unigram = true;
      spec.use_neural = true;
      spec.use_forward_likelihood = true;
      spec.use_backward_likelihood = true;
      break;
  }
  return spec;
}

void EvaluatorSpec::validate() const {
  if (kind == EvaluatorKind::kCombinedLinear &&
      !(use_unigram && use_neural && use_forward_likelihood && use_backward_likelihood))
    throw Error("CombinedRequiresAllFeatures");
}

namespace {

std::vector<int> merged_tokens(const Dialogue& d) {
  std::vector<int> out;
  for (const auto& utt : d.context) out.insert(out.end(), utt.begin(), utt.end());
  out.insert(out.end(), d.response.begin(), d.response.end());
  return out;
}

std::vector<double> unigram_counts(const Dialogue& d, std::size_t vocab_size) {
  std::vector<double> f(vocab_size, 0.0);
  for (int tok : merged_tokens(d)) f[static_cast<std::size_t>(tok)] += 1.0;
  return f;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// subgradient SGD on the hinge loss with L2 regularization; the max-margin
// stand-in for the paper's SVM baselines
void train_hinge(std::vector<double>& w, double& bias,
                 const std::vector<std::vector<double>>& features,
                 const std::vector<int>& labels, const EvaluatorSpec& spec,
                 std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x68696e67ULL}));
  for (std::size_t epoch = 0; epoch < spec.hinge_epochs; ++epoch) {
    auto idx = shuffled_indices(features.size(), rng);
    for (std::size_t i : idx) {
      const auto& f = features[i];
      double y = labels[i] > 0 ? 1.0 : -1.0;
      double margin = bias;
      for (std::size_t k = 0; k < f.size(); ++k) margin += w[k] * f[k];
      margin *= y;
      for (std::size_t k = 0; k < f.size(); ++k) {
        double g = spec.hinge_reg * w[k];
        if (margin < 1.0) g -= y * f[k];
        w[k] -= spec.hinge_lr * g;
      }
      if (margin < 1.0) bias += spec.hinge_lr * y;
    }
  }
}

Tensor concat_forward(const ConcatNet& net, const Dialogue& d, std::size_t hidden) {
  // fixed positional slots in chronological order: first context sentence,
  // second context sentence (zero when absent), response
  std::vector<Tensor> slots(3, Tensor::zeros({hidden}));
  auto encode = [&](const std::vector<int>& utt) {
    Tensor h = Tensor::zeros({hidden});
    for (int tok : utt)
      h = net.word_enc.step(row(net.embeddings, static_cast<std::size_t>(tok)), h);
    return h;
  };
  for (std::size_t i = 0; i < d.context.size() && i < 2; ++i)
    slots[i] = encode(d.context[i]);
  slots[2] = encode(d.response);
  Tensor joined = concat(concat(slots[0], slots[1]), slots[2]);
  Tensor h1 = tanh(add(matvec(net.w1, joined), net.b1));
  return softmax(add(matvec(net.w2, h1), net.b2));
}

Tensor hier_forward(const DiscriminatorModel& hier, const Dialogue& d) {
  return discriminator_score_t(hier, d.context, d.response);
}

std::vector<Tensor> concat_params(const ConcatNet& net) {
  std::vector<Tensor> out{net.embeddings, net.w1, net.b1, net.w2, net.b2};
  std::vector<std::pair<std::string, Tensor>> cell;
  net.word_enc.collect("x", cell);
  for (auto& [n, t] : cell) out.push_back(t);
  return out;
}

// cross-entropy SGD for the neural evaluators
template <typename Forward>
void train_neural(const Forward& forward_prob_human, const std::vector<Tensor>& params,
                  const std::vector<const Dialogue*>& examples, const std::vector<int>& labels,
                  const EvaluatorSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x6e657572ULL}));
  double lr = spec.neural_lr;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    auto idx = shuffled_indices(examples.size(), rng);
    for (std::size_t start = 0; start < idx.size(); start += spec.batch_size) {
      std::size_t end = std::min(idx.size(), start + spec.batch_size);
      zero_grads(params);
      Tensor loss = Tensor::scalar(0.0);
      for (std::size_t i = start; i < end; ++i) {
        Tensor p_human = forward_prob_human(*examples[idx[i]]);
        Tensor p = labels[idx[i]] > 0 ? p_human : sub(Tensor::scalar(1.0), p_human);
        loss = sub(loss, log(p));
      }
      loss = mul_scalar(loss, 1.0 / static_cast<double>(end - start));
      if (!std::isfinite(loss.item())) throw Error("Diverged(evaluator)");
      backward(loss);
      clip_gradients(params, 5.0);
      sgd_step(params, lr);
      zero_grads(params);
    }
    lr *= spec.neural_lr_decay;
  }
}

ConcatNet create_concat(const Vocab& vocab, ModelDims dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x636f6e63ULL}));
  auto init = [&rng](std::vector<std::size_t> shape) {
    return Tensor::uniform(std::move(shape), rng, -kClassifierInitRange, kClassifierInitRange,
                           true);
  };
  ConcatNet net;
  net.embeddings = init({vocab.size(), dims.embed});
  net.word_enc.wz = init({dims.hidden, dims.embed});
  net.word_enc.uz = init({dims.hidden, dims.hidden});
  net.word_enc.bz = init({dims.hidden});
  net.word_enc.wr = init({dims.hidden, dims.embed});
  net.word_enc.ur = init({dims.hidden, dims.hidden});
  net.word_enc.br = init({dims.hidden});
  net.word_enc.wh = init({dims.hidden, dims.embed});
  net.word_enc.uh = init({dims.hidden, dims.hidden});
  net.word_enc.bh = init({dims.hidden});
  net.w1 = init({dims.hidden, 3 * dims.hidden});
  net.b1 = init({dims.hidden});
  net.w2 = init({2, dims.hidden});
  net.b2 = init({2});
  return net;
}

double per_token_log_likelihood(const GeneratorModel& gen, const Context& x,
                                const std::vector<int>& y) {
  std::vector<int> target = y;
  target.push_back(Vocab::kEos);
  double total = 0.0;
  for (double lp : generator_log_prob(gen, x, target)) total += lp;
  return total / static_cast<double>(target.size());
}

std::vector<double> combined_features(const TrainedEvaluator& ev, const Dialogue& d) {
  std::vector<double> f = unigram_counts(d, ev.vocab_size);
  // representation before the softmax layer of the hierarchical model
  Tensor h = Tensor::zeros({ev.hier.dims.hidden});
  for (const auto& utt : d.context) {
    Tensor u = Tensor::zeros({ev.hier.dims.hidden});
    for (int tok : utt)
      u = ev.hier.word_enc.step(row(ev.hier.embeddings, static_cast<std::size_t>(tok)), u);
    h = ev.hier.utt_enc.step(u, h);
  }
  {
    Tensor u = Tensor::zeros({ev.hier.dims.hidden});
    for (int tok : d.response)
      u = ev.hier.word_enc.step(row(ev.hier.embeddings, static_cast<std::size_t>(tok)), u);
    h = ev.hier.utt_enc.step(u, h);
  }
  f.insert(f.end(), h.values().begin(), h.values().end());
  f.push_back(per_token_log_likelihood(*ev.forward_gen, d.context, d.response));
  // backward likelihood: response as context, concatenated context as target
  std::vector<int> back_target;
  for (const auto& utt : d.context) back_target.insert(back_target.end(), utt.begin(), utt.end());
  if (back_target.empty()) {
    f.push_back(0.0);
  } else {
    Context yctx = {d.response};
    std::vector<int> target = back_target;
    target.push_back(Vocab::kEos);
    double total = 0.0;
    for (double lp : generator_log_prob(*ev.backward_gen, yctx, target)) total += lp;
    f.push_back(total / static_cast<double>(target.size()));
  }
  return f;
}

}  // namespace

double TrainedEvaluator::human_margin(const Dialogue& d) const {
  switch (kind) {
    case EvaluatorKind::kUnigramLinear: {
      auto f = unigram_counts(d, vocab_size);
      double m = bias;
      for (std::size_t k = 0; k < f.size(); ++k) m += weights[k] * f[k];
      return m;
    }
    case EvaluatorKind::kCombinedLinear: {
      auto f = combined_features(*this, d);
      double m = bias;
      for (std::size_t k = 0; k < f.size(); ++k) m += weights[k] * f[k];
      return m;
    }
    case EvaluatorKind::kHierNeural:
      return hier_forward(hier, d).item() - 0.5;
    case EvaluatorKind::kConcatNeural:
      return pick(concat_forward(concat, d, concat.w1.shape()[0]), 1).item() - 0.5;
  }
  throw Error("UnknownEvaluatorKind");
}

std::vector<std::pair<std::string, Tensor>> TrainedEvaluator::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (kind == EvaluatorKind::kHierNeural || kind == EvaluatorKind::kCombinedLinear) {
    for (auto& [n, t] : hier.named_params()) out.emplace_back("eval." + n, t);
  }
  if (kind == EvaluatorKind::kConcatNeural) {
    out.emplace_back("eval.concat.embeddings", concat.embeddings);
    concat.word_enc.collect("eval.concat.word_enc", out);
    out.emplace_back("eval.concat.w1", concat.w1);
    out.emplace_back("eval.concat.b1", concat.b1);
    out.emplace_back("eval.concat.w2", concat.w2);
    out.emplace_back("eval.concat.b2", concat.b2);
  }
  return out;
}

namespace {

double training_accuracy(const TrainedEvaluator& ev, const std::vector<Dialogue>& positives,
                         const std::vector<Dialogue>& negatives) {
  double tp = 0.0, tn = 0.0;
  for (const auto& d : positives) {
    if (ev.predicts_human(d)) tp += 1.0;
  }
  for (const auto& d : negatives) {
    if (!ev.predicts_human(d)) tn += 1.0;
  }
  return 0.5 * (tp / static_cast<double>(positives.size()) +
                tn / static_cast<double>(negatives.size()));
}

TrainedEvaluator train_evaluator_once(const EvaluatorSpec& spec, const Vocab& vocab,
                                      const std::vector<Dialogue>& positives,
                                      const std::vector<Dialogue>& negatives,
                                      std::uint64_t seed, const LikelihoodModels& likelihood) {
  TrainedEvaluator ev;
  ev.kind = spec.kind;
  ev.vocab_size = vocab.size();

  std::vector<const Dialogue*> examples;
  std::vector<int> labels;
  for (const auto& d : positives) {
    examples.push_back(&d);
    labels.push_back(1);
  }
  for (const auto& d : negatives) {
    examples.push_back(&d);
    labels.push_back(-1);
  }

  switch (spec.kind) {
    case EvaluatorKind::kUnigramLinear: {
      std::vector<std::vector<double>> feats;
      feats.reserve(examples.size());
      for (const Dialogue* d : examples) feats.push_back(unigram_counts(*d, vocab.size()));
      ev.weights.assign(vocab.size(), 0.0);
      train_hinge(ev.weights, ev.bias, feats, labels, spec, seed);
      break;
    }
    case EvaluatorKind::kHierNeural: {
      ev.hier = DiscriminatorModel::create(vocab, spec.dims, derive_seed(seed, {0x6576ULL}));
      auto fwd = [&ev](const Dialogue& d) { return hier_forward(ev.hier, d); };
      train_neural(fwd, ev.hier.params(), examples, labels, spec, seed);
      break;
    }
    case EvaluatorKind::kConcatNeural: {
      ev.concat = create_concat(vocab, spec.dims, derive_seed(seed, {0x6576ULL}));
      auto fwd = [&ev, &spec](const Dialogue& d) {
        return pick(concat_forward(ev.concat, d, spec.dims.hidden), 1);
      };
      train_neural(fwd, concat_params(ev.concat), examples, labels, spec, seed);
      break;
    }
    case EvaluatorKind::kCombinedLinear: {
      ev.forward_gen = likelihood.forward;
      ev.backward_gen = likelihood.backward;
      // neural representation trained end-to-end first, then frozen
      ev.hier = DiscriminatorModel::create(vocab, spec.dims, derive_seed(seed, {0x6576ULL}));
      auto fwd = [&ev](const Dialogue& d) { return hier_forward(ev.hier, d); };
      train_neural(fwd, ev.hier.params(), examples, labels, spec, seed);
      std::vector<std::vector<double>> feats;
      feats.reserve(examples.size());
      for (const Dialogue* d : examples) feats.push_back(combined_features(ev, *d));
      ev.weights.assign(feats.front().size(), 0.0);
      train_hinge(ev.weights, ev.bias, feats, labels, spec, derive_seed(seed, {0x6368ULL}));
      break;
    }
  }
  return ev;
}

}  // namespace

TrainedEvaluator train_evaluator(const EvaluatorSpec& spec, const Vocab& vocab,
                                 const std::vector<Dialogue>& positives,
                                 const std::vector<Dialogue>& negatives, std::uint64_t seed,
                                 const LikelihoodModels& likelihood) {
  spec.validate();
  if (positives.empty() || negatives.empty()) throw Error("DegenerateTrainingSet");
  if (spec.kind == EvaluatorKind::kCombinedLinear &&
      (!likelihood.forward || !likelihood.backward))
    throw Error("MissingLikelihoodModels");
  std::size_t restarts = std::max<std::size_t>(1, spec.restarts);
  bool neural = spec.kind != EvaluatorKind::kUnigramLinear;
  if (!neural) restarts = 1;  // the convex fit does not need them

  TrainedEvaluator best;
  double best_acc = -1.0;
  for (std::size_t r = 0; r < restarts; ++r) {
    TrainedEvaluator candidate = train_evaluator_once(
        spec, vocab, positives, negatives, derive_seed(seed, {0x72737472ULL, r}), likelihood);
    double acc = training_accuracy(candidate, positives, negatives);
    if (acc > best_acc) {
      best_acc = acc;
      best = std::move(candidate);
    }
  }
  return best;
}

double balanced_accuracy(const TrainedEvaluator& evaluator,
                         const std::vector<Dialogue>& test_pos,
                         const std::vector<Dialogue>& test_neg) {
  if (test_pos.empty() || test_neg.empty()) throw Error("DegenerateTrainingSet");
  double tp = 0.0, tn = 0.0;
  for (const auto& d : test_pos) {
    if (evaluator.predicts_human(d)) tp += 1.0;
  }
  for (const auto& d : test_neg) {
    if (!evaluator.predicts_human(d)) tn += 1.0;
  }
  return 0.5 * (tp / static_cast<double>(test_pos.size()) +
                tn / static_cast<double>(test_neg.size()));
}

double adver_suc(const TrainedEvaluator& evaluator, const std::vector<Dialogue>& test_pos,
                 const std::vector<Dialogue>& test_neg) {
  return 1.0 - balanced_accuracy(evaluator, test_pos, test_neg);
}

double gold_adver_suc(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kHumanVsHuman:
    case ScenarioKind::kMachineVsMachine: return 0.5;
    case ScenarioKind::kHumanVsRandom:
    case ScenarioKind::kHumanVsNext: return 0.0;
  }
  throw Error("UnknownScenarioKind");
}

ScenarioData build_scenario(ScenarioKind kind, const std::vector<Dialogue>& corpus,
                            const std::vector<Dialogue>& machine_outputs, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x7363656eULL, static_cast<std::uint64_t>(kind)}));
  ScenarioData out;
  switch (kind) {
    case ScenarioKind::kHumanVsHuman: {
      if (corpus.size() < 2) throw Error("EmptyCorpus");
      auto idx = shuffled_indices(corpus.size(), rng);
      std::size_t half = corpus.size() / 2;
      for (std::size_t i = 0; i < half; ++i) out.positives.push_back(corpus[idx[i]]);
      for (std::size_t i = half; i < std::min(corpus.size(), 2 * half + 1); ++i)
        out.negatives.push_back(corpus[idx[i]]);
      break;
    }
    case ScenarioKind::kMachineVsMachine: {
      if (machine_outputs.size() < 2) throw Error("EmptyCorpus");
      auto idx = shuffled_indices(machine_outputs.size(), rng);
      std::size_t half = machine_outputs.size() / 2;
      for (std::size_t i = 0; i < half; ++i) out.positives.push_back(machine_outputs[idx[i]]);
      for (std::size_t i = half; i < std::min(machine_outputs.size(), 2 * half + 1); ++i)
        out.negatives.push_back(machine_outputs[idx[i]]);
      break;
    }
    case ScenarioKind::kHumanVsRandom: {
      if (corpus.size() < 2) throw Error("EmptyCorpus");
      for (const auto& d : corpus) {
        out.positives.push_back(d);
        Dialogue neg = d;
        // unrelated response; never the true response for this context
        for (int attempt = 0; attempt < 64; ++attempt) {
          const Dialogue& other = corpus[rng.uniform_index(corpus.size())];
          if (other.response != d.response) {
            neg.response = other.response;
            break;
          }
        }
        if (neg.response == d.response) continue;  // pathological corpus
        out.negatives.push_back(std::move(neg));
        if (out.negatives.size() != out.positives.size()) out.positives.pop_back();
      }
      break;
    }
    case ScenarioKind::kHumanVsNext: {
      for (std::size_t i = 0; i + 1 < corpus.size(); ++i) {
        const Dialogue& cur = corpus[i];
        const Dialogue& next = corpus[i + 1];
        // consecutive lines chain when the next context is (cur's last
        // context utterance, cur's response)
        if (cur.context.empty() || next.context.size() != 2) continue;
        if (next.context[0] != cur.context.back() || next.context[1] != cur.response) continue;
        out.positives.push_back(cur);
        Dialogue neg = cur;
        neg.response = next.response;
        out.negatives.push_back(std::move(neg));
      }
      if (out.positives.empty()) throw Error("NoSuccessorAvailable");
      break;
    }
  }
  return out;
}

void split_scenario(const ScenarioData& data, double train_fraction, std::uint64_t seed,
                    ScenarioData* train, ScenarioData* test) {
  Rng rng(derive_seed(seed, {0x73706c69ULL}));
  auto split = [&](const std::vector<Dialogue>& all, std::vector<Dialogue>* tr,
                   std::vector<Dialogue>* te) {
    auto idx = shuffled_indices(all.size(), rng);
    std::size_t n_train = static_cast<std::size_t>(train_fraction * all.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? tr : te)->push_back(all[idx[i]]);
  };
  split(data.positives, &train->positives, &test->positives);
  split(data.negatives, &train->negatives, &test->negatives);
}

double ere_value(const std::array<double, 4>& measured_adver_suc) {
  const std::array<ScenarioKind, 4> kinds = {
      ScenarioKind::kHumanVsHuman, ScenarioKind::kMachineVsMachine,
      ScenarioKind::kHumanVsRandom, ScenarioKind::kHumanVsNext};
  double total = 0.0;
  for (std::size_t s = 0; s < kinds.size(); ++s)
    total += std::abs(measured_adver_suc[s] - gold_adver_suc(kinds[s]));
  return total / static_cast<double>(kinds.size());
}

EreResult ere(const EvaluatorFactory& factory, const std::vector<Dialogue>& corpus,
              const std::vector<Dialogue>& machine_outputs, std::uint64_t seed) {
  EreResult result;
  const std::array<ScenarioKind, 4> kinds = {
      ScenarioKind::kHumanVsHuman, ScenarioKind::kMachineVsMachine,
      ScenarioKind::kHumanVsRandom, ScenarioKind::kHumanVsNext};
  for (std::size_t s = 0; s < kinds.size(); ++s) {
    ScenarioData data = build_scenario(kinds[s], corpus, machine_outputs, seed);
    ScenarioData train, test;
    split_scenario(data, 0.7, derive_seed(seed, {0x65726573ULL, s}), &train, &test);
    TrainedEvaluator ev = factory(train.positives, train.negatives,
                                  derive_seed(seed, {0x65726574ULL, s}));
    result.adver_suc[s] = adver_suc(ev, test.positives, test.negatives);
    result.deviation[s] = std::abs(result.adver_suc[s] - gold_adver_suc(kinds[s]));
  }
  result.ere = ere_value(result.adver_suc);
  return result;
}

double machine_vs_random(const EvaluatorFactory& factory,
                         const std::vector<Dialogue>& machine_outputs,
                         const std::vector<Dialogue>& corpus, std::uint64_t seed) {
  if (machine_outputs.empty()) throw Error("EmptyCorpus");
  Rng rng(derive_seed(seed, {0x6d767241ULL}));
  ScenarioData data;
  for (const auto& m : machine_outputs) {
    data.positives.push_back(m);
    Dialogue neg = m;
    neg.response = corpus[rng.uniform_index(corpus.size())].response;
    data.negatives.push_back(std::move(neg));
  }
  ScenarioData train, test;
  split_scenario(data, 0.7, derive_seed(seed, {0x6d767242ULL}), &train, &test);
  TrainedEvaluator ev =
      factory(train.positives, train.negatives, derive_seed(seed, {0x6d767243ULL}));
  return balanced_accuracy(ev, test.positives, test.negatives);
}

}  // namespace advdial
