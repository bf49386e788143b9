#pragma once

#include <string>
#include <vector>

#include "advdial/models.hpp"

namespace advdial {

enum class DecodeStrategy { kGreedy, kSample, kBeam, kMmiBackward, kAntiLm };

DecodeStrategy parse_strategy(const std::string& name);
std::string strategy_name(DecodeStrategy s);

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kBeam;
  std::size_t beam_width = 5;
  double gamma_sib = 1.0;     // intra-sibling rank penalty
  double gamma_rep = 1.0;     // repeated word-type penalty (stop words exempt)
  double temperature = 1.0;   // sampling
  double mmi_lambda = 0.5;    // backward reranking weight
  double anti_lm_weight = 0.25;
  std::size_t max_len = 20;
};

struct BeamHypothesis {
  std::vector<int> tokens;         // prefix, possibly ending with EOS
  double adjusted = 0.0;           // raw log-prob minus accumulated penalties
  double raw_log_prob = 0.0;
  double lm_log_prob = 0.0;        // filled by anti-LM decoding
  bool ended_with_eos = false;
  std::vector<int> word_types;     // sorted non-stop-word ids generated so far
};

// Tokens a decoder may emit: everything except PAD and BOS.
bool decodable_token(int tok);

std::vector<int> greedy_decode(const GeneratorModel& gen, const Vocab& vocab,
                               const Context& x, std::size_t max_len);

std::vector<int> sample_decode(const GeneratorModel& gen, const Vocab& vocab,
                               const Context& x, double temperature, std::uint64_t seed,
                               std::size_t max_len);

// Diverse beam search: a parent's children are ranked by raw log-prob and the
// k-th sibling loses k * gamma_sib; candidates repeating an already-generated
// non-stop word type lose gamma_rep. Returns up to beam_width hypotheses
// sorted by adjusted score (ties: lexicographically smaller token sequence).
std::vector<BeamHypothesis> beam_search(const GeneratorModel& gen, const Vocab& vocab,
                                        const Context& x, const DecodeConfig& config);

// Beam search with per-step score log p(y_t|x,.) - weight * log p_LM(y_t|.).
std::vector<BeamHypothesis> anti_lm_beam(const GeneratorModel& gen, const LanguageModel& lm,
                                         const Vocab& vocab, const Context& x,
                                         const DecodeConfig& config);

// Rescores an n-best list with (1-lambda) * fwd + lambda * bwd, both
// normalized per token; the backward term is log p(x|y) under a generator
// trained response -> context. Stable sort descending on the combined score.
std::vector<BeamHypothesis> mmi_backward_rerank(const std::vector<BeamHypothesis>& nbest,
                                                const GeneratorModel& backward_gen,
                                                const Vocab& vocab, const Context& x,
                                                double lambda);

// Strategy dispatch used by the pipeline; returns (response, score).
std::pair<std::vector<int>, double> decode_response(
    const GeneratorModel& gen, const GeneratorModel* backward_gen, const LanguageModel* lm,
    const Vocab& vocab, const Context& x, const DecodeConfig& config, std::uint64_t seed);

// Decode output file: context (utterances joined by " | ") TAB response TAB
// score with six decimals.
struct DecodedLine {
  RawDialogue dialogue;
  double score = 0.0;
};
void write_decode_file(const std::string& path, const std::vector<DecodedLine>& lines);
std::vector<DecodedLine> read_decode_file(const std::string& path);

}  // namespace advdial
