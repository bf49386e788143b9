#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "advdial/common.hpp"

namespace advdial {

// One corpus line before tokenization: up to two context utterances plus a
// response, each a list of whitespace-split tokens.
struct RawDialogue {
  std::vector<std::vector<std::string>> context;
  std::vector<std::string> response;
};

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  std::vector<std::string> tokens;  // index == id, first four reserved
  std::vector<bool> stop_flag;
  std::unordered_map<std::string, int> index;

  static Vocab build(const std::vector<RawDialogue>& dialogues);

  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool is_stop(int id) const { return stop_flag[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return tokens.size(); }
  std::uint64_t hash() const;

  // One non-reserved token per line; line number == id - 4.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
};

// Fixed built-in function-word list (incl. punctuation tokens).
const std::vector<std::string>& stop_word_list();

struct Dialogue {
  std::vector<std::vector<int>> context;  // 0..2 utterances
  std::vector<int> response;              // nonempty, no BOS/EOS
};

struct Corpus {
  std::vector<RawDialogue> raw;
  std::vector<Dialogue> dialogues;
  Vocab vocab;
};

// Reads the TAB-separated corpus format. Throws ParseError(line_no) on a
// malformed line and EmptyCorpus on an empty file. Lines with more than two
// context utterances keep only the last two.
std::vector<RawDialogue> read_corpus_file(const std::string& path);
void write_corpus_file(const std::string& path, const std::vector<RawDialogue>& dialogues);

Dialogue tokenize_dialogue(const RawDialogue& raw, const Vocab& vocab);

// Loads a corpus and builds the vocabulary from the first vocab_from_first_n
// dialogues (the training split); remaining lines map unseen tokens to UNK.
Corpus load_corpus(const std::string& path, std::size_t vocab_from_first_n = SIZE_MAX);

std::vector<Dialogue> filter_min_length(const std::vector<Dialogue>& dialogues,
                                        std::size_t threshold);

// Document-frequency statistics over response sentences (each sentence is one
// document; stop words excluded).
struct TfidfStats {
  std::size_t num_documents = 0;
  std::unordered_map<int, std::size_t> doc_freq;

  static TfidfStats build(const std::vector<Dialogue>& dialogues, const Vocab& vocab);
  double idf(int token_id) const;
  // Mean tf*idf over non-stop token occurrences; negative when the response
  // has no content tokens (resolved to the batch minimum by the caller).
  double sentence_score(const std::vector<int>& response, const Vocab& vocab) const;
};

// rate_i = N * lr * t_i / sum(t), after capping each t_i at cap_L * min(t).
// Negative scores (all-stop-word sentinels) are replaced by the pre-cap batch
// minimum of the defined scores.
std::vector<double> weighted_rates_from_scores(std::vector<double> scores, double base_lr,
                                               double cap_L);

std::vector<double> tfidf_weighted_rates(const std::vector<const Dialogue*>& batch,
                                         const TfidfStats& stats, const Vocab& vocab,
                                         double base_lr, double cap_L);

// ---- synthetic corpus ----
//
// Template grammar over a 16-noun cycle: every conversation walks the cycle
// one step per utterance, each utterance names the previous noun and the next
// one, so the response distribution given the context's last noun is
// template x adjective with known probabilities.
namespace synth {

const std::vector<std::string>& nouns();            // 16, cyclic order
const std::vector<std::string>& adjectives();       // 12
const std::vector<double>& adjective_probs();
const std::vector<double>& template_probs();        // 3 response templates
std::size_t noun_index(const std::string& noun);    // throws if unknown
const std::string& next_noun(const std::string& noun);

std::vector<std::string> opener_utterance(std::size_t which, const std::string& noun);
// Responses introduce a fresh noun early and close with the echoed noun of
// the previous utterance (the fresh noun is always next_noun(echo_noun)).
std::vector<std::string> response_utterance(std::size_t which, const std::string& new_noun,
                                            const std::string& echo_noun,
                                            const std::string& adjective);

// Rightmost noun occurring in the utterance; throws if none.
const std::string& last_noun(const std::vector<std::string>& utterance);

bool is_opener(const std::vector<std::string>& utterance);

// Noun the next utterance must close with, given the preceding utterance.
const std::string& expected_echo(const std::vector<std::string>& last_context_utterance);

// (template index, adjective index) of an in-grammar response; throws
// Error("OutOfGrammar") otherwise.
std::pair<std::size_t, std::size_t> classify_response(const std::vector<std::string>& toks);

// Probability of the response given the closing context utterance (0 when
// the response is not derivable from it).
double response_prob(const std::vector<std::string>& toks,
                     const std::vector<std::string>& last_context_utterance);

double response_entropy();          // nats per response
double expected_response_tokens();  // including the EOS step
double perplexity_lower_bound();    // exp(entropy / expected tokens)

std::vector<RawDialogue> generate(std::uint64_t seed, std::size_t n_dialogues);

}  // namespace synth

// Writes a synthetic corpus; byte-identical output for identical arguments.
void synth_corpus(const std::string& path, std::uint64_t seed, std::size_t n_dialogues);

}  // namespace advdial
