#include "advdial/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace advdial {

DecodeStrategy parse_strategy(const std::string& name) {
  if (name == "greedy") return DecodeStrategy::kGreedy;
  if (name == "sample") return DecodeStrategy::kSample;
  if (name == "beam") return DecodeStrategy::kBeam;
  if (name == "mmi_backward") return DecodeStrategy::kMmiBackward;
  if (name == "anti_lm") return DecodeStrategy::kAntiLm;
  throw Error("UnknownStrategy: " + name);
}

std::string strategy_name(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::kGreedy: return "greedy";
    case DecodeStrategy::kSample: return "sample";
    case DecodeStrategy::kBeam: return "beam";
    case DecodeStrategy::kMmiBackward: return "mmi_backward";
    case DecodeStrategy::kAntiLm: return "anti_lm";
  }
  throw Error("UnknownStrategy");
}

bool decodable_token(int tok) { return tok != Vocab::kPad && tok != Vocab::kBos; }

std::vector<int> greedy_decode(const GeneratorModel& gen, const Vocab& vocab,
                               const Context& x, std::size_t max_len) {
  (void)vocab;
  EncodedContext enc = encode_context(gen, x);
  Tensor state = enc.final_state;
  std::vector<int> out;
  int prev = Vocab::kBos;
  while (out.size() < max_len) {
    auto [next_state, probs] = decoder_step(gen, enc, prev, state);
    int best = -1;
    double best_p = -1.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (!decodable_token(static_cast<int>(v))) continue;
      if (probs.at(v) > best_p) {
        best_p = probs.at(v);
        best = static_cast<int>(v);
      }
    }
    out.push_back(best);
    if (best == Vocab::kEos) break;
    state = next_state;
    prev = best;
  }
  return out;
}

std::vector<int> sample_decode(const GeneratorModel& gen, const Vocab& vocab,
                               const Context& x, double temperature, std::uint64_t seed,
                               std::size_t max_len) {
  (void)vocab;
  if (!(temperature > 0.0)) throw Error("InvalidTemperature");
  Rng rng(derive_seed(seed, {0x73616d70ULL}));
  EncodedContext enc = encode_context(gen, x);
  Tensor state = enc.final_state;
  std::vector<int> out;
  int prev = Vocab::kBos;
  while (out.size() < max_len) {
    auto [next_state, probs] = decoder_step(gen, enc, prev, state);
    // softmax(log p / T) over decodable tokens, in log domain for stability
    std::vector<int> ids;
    std::vector<double> scaled;
    double mx = -1e300;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (!decodable_token(static_cast<int>(v))) continue;
      double s = std::log(std::max(probs.at(v), 1e-300)) / temperature;
      ids.push_back(static_cast<int>(v));
      scaled.push_back(s);
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (double& s : scaled) {
      s = std::exp(s - mx);
      z += s;
    }
    for (double& s : scaled) s /= z;
    int tok = ids[sample_categorical(scaled, rng)];
    out.push_back(tok);
    if (tok == Vocab::kEos) break;
    state = next_state;
    prev = tok;
  }
  return out;
}

namespace {

struct BeamState {
  BeamHypothesis hyp;
  Tensor gen_state;
  Tensor lm_state;
  int prev = Vocab::kBos;
};

bool hyp_less(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.adjusted != b.adjusted) return a.adjusted > b.adjusted;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  return a.tokens.size() < b.tokens.size();
}

bool has_word_type(const std::vector<int>& sorted_types, int tok) {
  return std::binary_search(sorted_types.begin(), sorted_types.end(), tok);
}

void add_word_type(std::vector<int>& sorted_types, int tok) {
  auto it = std::lower_bound(sorted_types.begin(), sorted_types.end(), tok);
  if (it == sorted_types.end() || *it != tok) sorted_types.insert(it, tok);
}

// Shared engine: anti-LM decoding is beam search with the LM penalty folded
// into each candidate's step score.
std::vector<BeamHypothesis> beam_core(const GeneratorModel& gen, const LanguageModel* lm,
                                      double lm_weight, const Vocab& vocab, const Context& x,
                                      const DecodeConfig& config) {
  if (config.beam_width < 1) throw Error("InvalidBeamWidth");
  if (config.max_len < 1) throw Error("InvalidMaxLen");
  EncodedContext enc = encode_context(gen, x);
  std::vector<BeamState> active;
  BeamState root;
  root.gen_state = enc.final_state;
  if (lm) root.lm_state = Tensor::zeros({lm->dims.hidden});
  active.push_back(std::move(root));

  std::vector<BeamHypothesis> finished;

  struct Candidate {
    std::size_t parent;
    int token;
    double adjusted;
    double raw;
    double lm_lp;
  };

  for (std::size_t step = 0; step < config.max_len; ++step) {
    std::vector<Candidate> candidates;
    std::vector<Tensor> next_gen_states(active.size());
    std::vector<Tensor> next_lm_states(active.size());
    for (std::size_t p = 0; p < active.size(); ++p) {
      auto [gstate, probs] = decoder_step(gen, enc, active[p].prev, active[p].gen_state);
      next_gen_states[p] = gstate;
      Tensor lm_probs;
      if (lm) {
        auto [lstate, lprobs] = lm_step(*lm, active[p].prev, active[p].lm_state);
        next_lm_states[p] = lstate;
        lm_probs = lprobs;
      }
      // children ranked by raw log-prob; k-th sibling pays k * gamma_sib
      std::vector<std::pair<double, int>> children;
      for (std::size_t v = 0; v < probs.size(); ++v) {
        if (!decodable_token(static_cast<int>(v))) continue;
        children.emplace_back(std::log(std::max(probs.at(v), 1e-300)),
                              static_cast<int>(v));
      }
      std::sort(children.begin(), children.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t rank = 0; rank < children.size(); ++rank) {
        auto [lp, tok] = children[rank];
        double step_score = lp - config.gamma_sib * static_cast<double>(rank);
        if (tok != Vocab::kEos && !vocab.is_stop(tok) &&
            has_word_type(active[p].hyp.word_types, tok))
          step_score -= config.gamma_rep;
        double lm_lp = 0.0;
        if (lm) {
          lm_lp = std::log(std::max(lm_probs.at(static_cast<std::size_t>(tok)), 1e-300));
          step_score -= lm_weight * lm_lp;
        }
        candidates.push_back({p, tok, active[p].hyp.adjusted + step_score,
                              active[p].hyp.raw_log_prob + lp,
                              active[p].hyp.lm_log_prob + lm_lp});
      }
    }
    std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.adjusted != b.adjusted) return a.adjusted > b.adjusted;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    std::vector<BeamState> next_active;
    std::size_t taken = 0;
    for (const Candidate& c : candidates) {
      if (taken >= config.beam_width) break;
      ++taken;
      BeamHypothesis h = active[c.parent].hyp;
      h.tokens.push_back(c.token);
      h.adjusted = c.adjusted;
      h.raw_log_prob = c.raw;
      h.lm_log_prob = c.lm_lp;
      if (c.token == Vocab::kEos) {
        h.ended_with_eos = true;
        finished.push_back(std::move(h));
        continue;
      }
      if (!vocab.is_stop(c.token)) add_word_type(h.word_types, c.token);
      BeamState s;
      s.hyp = std::move(h);
      s.gen_state = next_gen_states[c.parent];
      if (lm) s.lm_state = next_lm_states[c.parent];
      s.prev = c.token;
      next_active.push_back(std::move(s));
    }
    active = std::move(next_active);
    if (active.empty()) break;
  }
  // hypotheses still alive at max length are returned truncated
  for (auto& s : active) finished.push_back(std::move(s.hyp));
  std::sort(finished.begin(), finished.end(), hyp_less);
  if (finished.size() > config.beam_width) finished.resize(config.beam_width);
  return finished;
}

std::vector<int> concat_context_tokens(const Context& x) {
  std::vector<int> out;
  for (const auto& utt : x) out.insert(out.end(), utt.begin(), utt.end());
  return out;
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const GeneratorModel& gen, const Vocab& vocab,
                                        const Context& x, const DecodeConfig& config) {
  return beam_core(gen, nullptr, 0.0, vocab, x, config);
}

std::vector<BeamHypothesis> anti_lm_beam(const GeneratorModel& gen, const LanguageModel& lm,
                                         const Vocab& vocab, const Context& x,
                                         const DecodeConfig& config) {
  if (config.anti_lm_weight < 0.0) throw Error("InvalidAntiLmWeight");
  return beam_core(gen, &lm, config.anti_lm_weight, vocab, x, config);
}

std::vector<BeamHypothesis> mmi_backward_rerank(const std::vector<BeamHypothesis>& nbest,
                                                const GeneratorModel& backward_gen,
                                                const Vocab& vocab, const Context& x,
                                                double lambda) {
  (void)vocab;
  if (nbest.empty()) throw Error("EmptyNBest");
  if (lambda < 0.0 || lambda > 1.0) throw Error("InvalidLambda");
  std::vector<int> back_target = concat_context_tokens(x);
  back_target.push_back(Vocab::kEos);
  std::vector<BeamHypothesis> out = nbest;
  for (auto& h : out) {
    double fwd = h.raw_log_prob / static_cast<double>(std::max<std::size_t>(h.tokens.size(), 1));
    // backward generator reads the response as its (single-utterance) context
    std::vector<int> response_only = h.tokens;
    if (!response_only.empty() && response_only.back() == Vocab::kEos)
      response_only.pop_back();
    double bwd = 0.0;
    if (!response_only.empty()) {
      Context yctx = {response_only};
      double nll = generator_nll(backward_gen, yctx, back_target).item();
      bwd = -nll / static_cast<double>(back_target.size());
    }
    h.adjusted = (1.0 - lambda) * fwd + lambda * bwd;
  }
  std::stable_sort(out.begin(), out.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    return a.adjusted > b.adjusted;
  });
  return out;
}

std::pair<std::vector<int>, double> decode_response(
    const GeneratorModel& gen, const GeneratorModel* backward_gen, const LanguageModel* lm,
    const Vocab& vocab, const Context& x, const DecodeConfig& config, std::uint64_t seed) {
  switch (config.strategy) {
    case DecodeStrategy::kGreedy: {
      auto y = greedy_decode(gen, vocab, x, config.max_len);
      double lp = 0.0;
      for (double v : generator_log_prob(gen, x, y)) lp += v;
      return {y, lp};
    }
    case DecodeStrategy::kSample: {
      auto y = sample_decode(gen, vocab, x, config.temperature, seed, config.max_len);
      double lp = 0.0;
      for (double v : generator_log_prob(gen, x, y)) lp += v;
      return {y, lp};
    }
    case DecodeStrategy::kBeam: {
      auto hyps = beam_search(gen, vocab, x, config);
      return {hyps.front().tokens, hyps.front().adjusted};
    }
    case DecodeStrategy::kMmiBackward: {
      if (!backward_gen) throw Error("MissingBackwardGenerator");
      auto hyps = beam_search(gen, vocab, x, config);
      auto reranked = mmi_backward_rerank(hyps, *backward_gen, vocab, x, config.mmi_lambda);
      return {reranked.front().tokens, reranked.front().adjusted};
    }
    case DecodeStrategy::kAntiLm: {
      if (!lm) throw Error("MissingLanguageModel");
      auto hyps = anti_lm_beam(gen, *lm, vocab, x, config);
      return {hyps.front().tokens, hyps.front().adjusted};
    }
  }
  throw Error("UnknownStrategy");
}

void write_decode_file(const std::string& path, const std::vector<DecodedLine>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError: cannot write " + path);
  for (const auto& line : lines) {
    std::string ctx;
    for (std::size_t i = 0; i < line.dialogue.context.size(); ++i) {
      if (i > 0) ctx += " | ";
      const auto& utt = line.dialogue.context[i];
      for (std::size_t j = 0; j < utt.size(); ++j) {
        ctx += utt[j];
        if (j + 1 < utt.size()) ctx += ' ';
      }
    }
    std::string resp;
    for (std::size_t j = 0; j < line.dialogue.response.size(); ++j) {
      resp += line.dialogue.response[j];
      if (j + 1 < line.dialogue.response.size()) resp += ' ';
    }
    char score[32];
    std::snprintf(score, sizeof(score), "%.6f", line.score);
    out << ctx << "\t" << resp << "\t" << score << "\n";
  }
}

std::vector<DecodedLine> read_decode_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError: cannot read " + path);
  std::vector<DecodedLine> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) throw Error("ParseError(" + std::to_string(line_no) + ")");
    DecodedLine d;
    // context utterances are joined by " | "
    std::string ctx = fields[0];
    std::size_t pos = 0;
    while (true) {
      std::size_t sep = ctx.find(" | ", pos);
      std::string part = ctx.substr(pos, sep == std::string::npos ? sep : sep - pos);
      std::istringstream iss(part);
      std::vector<std::string> toks;
      std::string t;
      while (iss >> t) toks.push_back(t);
      if (!toks.empty()) d.dialogue.context.push_back(std::move(toks));
      if (sep == std::string::npos) break;
      pos = sep + 3;
    }
    std::istringstream riss(fields[1]);
    std::string t;
    while (riss >> t) d.dialogue.response.push_back(t);
    if (d.dialogue.response.empty())
      throw Error("ParseError(" + std::to_string(line_no) + ")");
    d.score = std::stod(fields[2]);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace advdial
