#include "advdial/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace advdial {

namespace {

const char* kReservedTokens[Vocab::kReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::vector<std::string> split_tokens(const std::string& field) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream iss(field);
  while (iss >> cur) out.push_back(cur);
  return out;
}

bool has_empty_token_slot(const std::string& field) {
  if (field.empty()) return true;
  if (field.front() == ' ' || field.back() == ' ') return true;
  return field.find("  ") != std::string::npos;
}

}  // namespace

const std::vector<std::string>& stop_word_list() {
  static const std::vector<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",    "but",  "by",
      "can",  "did",  "do",   "does", "for",  "from", "had",   "has",  "have",
      "he",   "her",  "him",  "his",  "i",    "if",   "in",    "is",   "it",
      "its",  "me",   "my",   "no",   "not",  "of",   "on",    "or",   "our",
      "she",  "so",   "that", "the",  "their", "them", "they", "this", "to",
      "was",  "we",   "were", "what", "will", "with", "you",   "your",
      ".",    ",",    "?",    "!"};
  return words;
}

Vocab Vocab::build(const std::vector<RawDialogue>& dialogues) {
  Vocab v;
  for (int i = 0; i < kReserved; ++i) {
    v.tokens.emplace_back(kReservedTokens[i]);
    v.stop_flag.push_back(false);
    v.index.emplace(v.tokens.back(), i);
  }
  auto add = [&v](const std::vector<std::string>& utt) {
    for (const auto& tok : utt) {
      if (v.index.emplace(tok, static_cast<int>(v.tokens.size())).second) {
        v.tokens.push_back(tok);
        v.stop_flag.push_back(false);
      }
    }
  };
  for (const auto& d : dialogues) {
    for (const auto& utt : d.context) add(utt);
    add(d.response);
  }
  for (const auto& w : stop_word_list()) {
    auto it = v.index.find(w);
    if (it != v.index.end()) v.stop_flag[static_cast<std::size_t>(it->second)] = true;
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int token_id) const {
  if (token_id < 0 || static_cast<std::size_t>(token_id) >= tokens.size())
    throw Error("TokenOutOfVocab");
  return tokens[static_cast<std::size_t>(token_id)];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens) {
    h = fnv1a64(t.data(), t.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError: cannot write " + path);
  for (std::size_t i = kReserved; i < tokens.size(); ++i) out << tokens[i] << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError: cannot read " + path);
  Vocab v;
  for (int i = 0; i < kReserved; ++i) {
    v.tokens.emplace_back(kReservedTokens[i]);
    v.stop_flag.push_back(false);
    v.index.emplace(v.tokens.back(), i);
  }
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!v.index.emplace(line, static_cast<int>(v.tokens.size())).second)
      throw Error("DuplicateVocabToken: " + line);
    v.tokens.push_back(line);
    v.stop_flag.push_back(false);
  }
  for (const auto& w : stop_word_list()) {
    auto it = v.index.find(w);
    if (it != v.index.end()) v.stop_flag[static_cast<std::size_t>(it->second)] = true;
  }
  return v;
}

std::vector<RawDialogue> read_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError: cannot read " + path);
  std::vector<RawDialogue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    for (const auto& f : fields) {
      if (has_empty_token_slot(f)) throw Error("ParseError(" + std::to_string(line_no) + ")");
    }
    RawDialogue d;
    d.response = split_tokens(fields.back());
    if (d.response.empty()) throw Error("ParseError(" + std::to_string(line_no) + ")");
    // keep only the last two context utterances
    std::size_t n_ctx = fields.size() - 1;
    std::size_t first = n_ctx > 2 ? n_ctx - 2 : 0;
    for (std::size_t i = first; i < n_ctx; ++i) d.context.push_back(split_tokens(fields[i]));
    out.push_back(std::move(d));
  }
  if (out.empty()) throw Error("EmptyCorpus");
  return out;
}

void write_corpus_file(const std::string& path, const std::vector<RawDialogue>& dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError: cannot write " + path);
  for (const auto& d : dialogues) {
    std::string line;
    for (const auto& utt : d.context) {
      for (std::size_t i = 0; i < utt.size(); ++i) {
        line += utt[i];
        if (i + 1 < utt.size()) line += ' ';
      }
      line += '\t';
    }
    for (std::size_t i = 0; i < d.response.size(); ++i) {
      line += d.response[i];
      if (i + 1 < d.response.size()) line += ' ';
    }
    out << line << "\n";
  }
}

Dialogue tokenize_dialogue(const RawDialogue& raw, const Vocab& vocab) {
  Dialogue d;
  for (const auto& utt : raw.context) {
    std::vector<int> ids;
    ids.reserve(utt.size());
    for (const auto& t : utt) ids.push_back(vocab.id(t));
    d.context.push_back(std::move(ids));
  }
  d.response.reserve(raw.response.size());
  for (const auto& t : raw.response) d.response.push_back(vocab.id(t));
  return d;
}

Corpus load_corpus(const std::string& path, std::size_t vocab_from_first_n) {
  Corpus c;
  c.raw = read_corpus_file(path);
  std::size_t n = std::min(vocab_from_first_n, c.raw.size());
  std::vector<RawDialogue> head(c.raw.begin(), c.raw.begin() + static_cast<long>(n));
  c.vocab = Vocab::build(head);
  c.dialogues.reserve(c.raw.size());
  for (const auto& r : c.raw) c.dialogues.push_back(tokenize_dialogue(r, c.vocab));
  return c;
}

std::vector<Dialogue> filter_min_length(const std::vector<Dialogue>& dialogues,
                                        std::size_t threshold) {
  std::vector<Dialogue> out;
  out.reserve(dialogues.size());
  for (const auto& d : dialogues) {
    if (d.response.size() >= threshold) out.push_back(d);
  }
  return out;
}

TfidfStats TfidfStats::build(const std::vector<Dialogue>& dialogues, const Vocab& vocab) {
  TfidfStats s;
  for (const auto& d : dialogues) {
    ++s.num_documents;
    std::vector<int> seen;
    for (int tok : d.response) {
      if (vocab.is_stop(tok)) continue;
      if (std::find(seen.begin(), seen.end(), tok) == seen.end()) {
        seen.push_back(tok);
        ++s.doc_freq[tok];
      }
    }
  }
  return s;
}

double TfidfStats::idf(int token_id) const {
  auto it = doc_freq.find(token_id);
  double df = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((1.0 + static_cast<double>(num_documents)) / (1.0 + df)) + 1.0;
}

double TfidfStats::sentence_score(const std::vector<int>& response, const Vocab& vocab) const {
  std::vector<int> content;
  for (int tok : response) {
    if (!vocab.is_stop(tok)) content.push_back(tok);
  }
  if (content.empty()) return -1.0;
  double total = 0.0;
  for (int tok : content) {
    double tf = 0.0;
    for (int other : content) {
      if (other == tok) tf += 1.0;
    }
    tf /= static_cast<double>(content.size());
    total += tf * idf(tok);
  }
  return total / static_cast<double>(content.size());
}

std::vector<double> weighted_rates_from_scores(std::vector<double> scores, double base_lr,
                                               double cap_L) {
  if (scores.empty()) throw Error("EmptyBatch");
  if (!(base_lr > 0.0)) throw Error("InvalidLearningRate");
  if (!(cap_L >= 1.0)) throw Error("InvalidCap");
  // all-stop-word sentinels take the batch minimum of the defined scores
  double defined_min = -1.0;
  for (double s : scores) {
    if (s >= 0.0 && (defined_min < 0.0 || s < defined_min)) defined_min = s;
  }
  if (defined_min < 0.0) defined_min = 1.0;  // whole batch degenerate
  for (double& s : scores) {
    if (s < 0.0) s = defined_min;
  }
  double mn = *std::min_element(scores.begin(), scores.end());
  if (mn <= 0.0) {
    // all-zero scores degrade to uniform rates
    return std::vector<double>(scores.size(), base_lr);
  }
  for (double& s : scores) s = std::min(s, cap_L * mn);
  double total = 0.0;
  for (double s : scores) total += s;
  std::vector<double> rates(scores.size());
  double n = static_cast<double>(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    rates[i] = n * base_lr * scores[i] / total;
  return rates;
}

std::vector<double> tfidf_weighted_rates(const std::vector<const Dialogue*>& batch,
                                         const TfidfStats& stats, const Vocab& vocab,
                                         double base_lr, double cap_L) {
  std::vector<double> scores;
  scores.reserve(batch.size());
  for (const Dialogue* d : batch) scores.push_back(stats.sentence_score(d->response, vocab));
  return weighted_rates_from_scores(std::move(scores), base_lr, cap_L);
}

// ---- synthetic grammar ----

namespace synth {

const std::vector<std::string>& nouns() {
  static const std::vector<std::string> v = {
      "river",  "stone", "garden", "lantern", "harbor", "meadow",  "castle", "bridge",
      "forest", "tower", "market", "valley",  "mirror", "anchor",  "orchard", "temple"};
  return v;
}

const std::vector<std::string>& adjectives() {
  static const std::vector<std::string> v = {"bright", "quiet",   "ancient", "golden",
                                             "hidden", "gentle",  "crooked", "silver",
                                             "weary",  "scarlet", "humble",  "distant"};
  return v;
}

const std::vector<double>& adjective_probs() {
  static const std::vector<double> p = {0.16, 0.14, 0.12, 0.10, 0.09, 0.08,
                                        0.07, 0.07, 0.05, 0.05, 0.04, 0.03};
  return p;
}

const std::vector<double>& template_probs() {
  static const std::vector<double> p = {0.40, 0.35, 0.25};
  return p;
}

std::size_t noun_index(const std::string& noun) {
  const auto& ns = nouns();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] == noun) return i;
  }
  throw Error("UnknownNoun: " + noun);
}

const std::string& next_noun(const std::string& noun) {
  const auto& ns = nouns();
  return ns[(noun_index(noun) + 1) % ns.size()];
}

std::vector<std::string> opener_utterance(std::size_t which, const std::string& noun) {
  switch (which) {
    case 0: return {"tell", "me", "about", "the", noun, "."};
    case 1: return {"what", "do", "you", "know", "of", "the", noun, "?"};
    case 2: return {"have", "you", "seen", "the", noun, "lately", "?"};
    default: throw Error("UnknownTemplate");
  }
}

// the fresh noun leads, the echoed noun closes the utterance: final-state
// word encoders then carry the chain signal prominently
std::vector<std::string> response_utterance(std::size_t which, const std::string& new_noun,
                                            const std::string& echo_noun,
                                            const std::string& adjective) {
  switch (which) {
    case 0:
      return {"the", new_noun, "is", adjective, "like", "the", echo_noun, "."};
    case 1:
      return {"i", "saw", "the", new_noun, "looking", adjective, "by", "the", echo_noun, "."};
    case 2:
      return {"folk", "call", "the", new_noun, adjective, "near", "the", echo_noun, "."};
    default: throw Error("UnknownTemplate");
  }
}

const std::string& last_noun(const std::vector<std::string>& utterance) {
  for (auto it = utterance.rbegin(); it != utterance.rend(); ++it) {
    for (const auto& n : nouns()) {
      if (*it == n) return n;
    }
  }
  throw Error("NoNounInUtterance");
}

bool is_opener(const std::vector<std::string>& utterance) {
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& n : nouns()) {
      if (utterance == opener_utterance(k, n)) return true;
    }
  }
  return false;
}

const std::string& expected_echo(const std::vector<std::string>& last_context_utterance) {
  // every utterance closes one cycle step behind the next utterance's echo,
  // so one rule covers openers and responses alike
  return next_noun(last_noun(last_context_utterance));
}

std::pair<std::size_t, std::size_t> classify_response(const std::vector<std::string>& toks) {
  const auto& adjs = adjectives();
  for (std::size_t t = 0; t < template_probs().size(); ++t) {
    for (std::size_t a = 0; a < adjs.size(); ++a) {
      for (const auto& echo : nouns()) {
        if (toks == response_utterance(t, next_noun(echo), echo, adjs[a])) return {t, a};
      }
    }
  }
  throw Error("OutOfGrammar");
}

double response_prob(const std::vector<std::string>& toks,
                     const std::vector<std::string>& last_context_utterance) {
  const auto& echo = expected_echo(last_context_utterance);
  const auto& fresh = next_noun(echo);
  const auto& adjs = adjectives();
  for (std::size_t t = 0; t < template_probs().size(); ++t) {
    for (std::size_t a = 0; a < adjs.size(); ++a) {
      if (toks == response_utterance(t, fresh, echo, adjs[a]))
        return template_probs()[t] * adjective_probs()[a];
    }
  }
  return 0.0;
}

double response_entropy() {
  double h = 0.0;
  for (double p : template_probs()) h -= p * std::log(p);
  for (double p : adjective_probs()) h -= p * std::log(p);
  return h;
}

double expected_response_tokens() {
  double e = 0.0;
  for (std::size_t t = 0; t < template_probs().size(); ++t) {
    std::size_t len = response_utterance(t, "stone", "river", "bright").size();
    e += template_probs()[t] * static_cast<double>(len + 1);  // +1 for the EOS step
  }
  return e;
}

double perplexity_lower_bound() {
  return std::exp(response_entropy() / expected_response_tokens());
}

std::vector<RawDialogue> generate(std::uint64_t seed, std::size_t n_dialogues) {
  if (n_dialogues < 1) throw Error("InvalidCorpusSize");
  std::vector<RawDialogue> out;
  out.reserve(n_dialogues);
  Rng rng(derive_seed(seed, {0x53594e5448ULL}));
  const auto& ns = nouns();
  const auto& adjs = adjectives();
  while (out.size() < n_dialogues) {
    // one conversation: opener + three chained responses, emitted as three
    // sliding-window lines (window 2), so context length varies between one
    // and two utterances and every response has a successor line
    std::size_t start = rng.uniform_index(ns.size());
    std::size_t opener_k = rng.uniform_index(3);
    std::vector<std::vector<std::string>> utts;
    utts.push_back(opener_utterance(opener_k, ns[start]));
    std::size_t echo = (start + 1) % ns.size();
    for (int j = 0; j < 3; ++j) {
      std::size_t tpl = sample_categorical(template_probs(), rng);
      std::size_t adj = sample_categorical(adjective_probs(), rng);
      std::size_t fresh = (echo + 1) % ns.size();
      utts.push_back(response_utterance(tpl, ns[fresh], ns[echo], adjs[adj]));
      echo = fresh;
    }
    for (std::size_t line = 0; line < 3 && out.size() < n_dialogues; ++line) {
      RawDialogue d;
      if (line == 0) {
        d.context = {utts[0]};
      } else {
        d.context = {utts[line - 1], utts[line]};
      }
      d.response = utts[line + 1];
      out.push_back(std::move(d));
    }
  }
  return out;
}

}  // namespace synth

void synth_corpus(const std::string& path, std::uint64_t seed, std::size_t n_dialogues) {
  write_corpus_file(path, synth::generate(seed, n_dialogues));
}

}  // namespace advdial
