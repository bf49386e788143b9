#pragma once

#include <string>
#include <utility>
#include <vector>

#include "advdial/corpus.hpp"
#include "advdial/tensor.hpp"

namespace advdial {

struct ModelDims {
  std::size_t embed = 16;
  std::size_t hidden = 32;
};

// Generator and language-model parameters follow the Sutskever-style
// pretraining protocol, uniform in [-0.08, 0.08]. The classifier-style models
// (discriminator, critic) use a wider range: stacked gated cells initialized
// that small produce near-zero features at these dimensions and stall SGD.
constexpr double kInitRange = 0.08;
constexpr double kClassifierInitRange = 0.5;

// Single-layer gated recurrent cell (update/reset gating).
struct GruCell {
  Tensor wz, uz, bz;
  Tensor wr, ur, br;
  Tensor wh, uh, bh;

  static GruCell create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
  static GruCell create_zero(std::size_t input_dim, std::size_t hidden_dim);

  Tensor step(const Tensor& x, const Tensor& h) const;
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor>>& out) const;
};

using Context = std::vector<std::vector<int>>;

// ---- generator: attention encoder-decoder policy ----

struct GeneratorModel {
  std::size_t vocab_size = 0;
  ModelDims dims;
  std::uint64_t vocab_hash = 0;
  Tensor embeddings;  // [V, e]
  GruCell encoder;
  GruCell decoder;
  Tensor attn;   // [h, h] bilinear attention
  Tensor out_w;  // [V, 2h]
  Tensor out_b;  // [V]

  static GeneratorModel create(const Vocab& vocab, ModelDims dims, std::uint64_t seed);
  static GeneratorModel create_zero(const Vocab& vocab, ModelDims dims);
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
};

struct EncodedContext {
  std::vector<Tensor> states;     // one per context token
  std::vector<Tensor> attn_keys;  // attn * state, precomputed
  Tensor final_state;
};

// Context utterances are consumed as one concatenated token stream.
EncodedContext encode_context(const GeneratorModel& gen, const Context& context);

// One teacher-forced or free-running decoder step: returns (new state,
// probability row over the vocabulary).
std::pair<Tensor, Tensor> decoder_step(const GeneratorModel& gen, const EncodedContext& enc,
                                       int prev_token, const Tensor& state);

// Per-step probability rows for y under teacher forcing (y[t] scored given
// the gold prefix y[0..t-1]).
std::vector<Tensor> generator_step_probs(const GeneratorModel& gen, const Context& x,
                                         const std::vector<int>& y);

// In-graph -sum_t log p(y_t | x, y_{1:t-1}).
Tensor generator_nll(const GeneratorModel& gen, const Context& x, const std::vector<int>& y);

// Per-token log probabilities (values only).
std::vector<double> generator_log_prob(const GeneratorModel& gen, const Context& x,
                                       const std::vector<int>& y);

// In-graph sum_t weights[t] * log p(y_t | ...); the policy-gradient surrogate.
Tensor generator_weighted_log_prob(const GeneratorModel& gen, const Context& x,
                                   const std::vector<int>& y,
                                   const std::vector<double>& weights);

// ---- discriminator: hierarchical encoder + 2-class softmax ----

struct DiscriminatorModel {
  std::size_t vocab_size = 0;
  ModelDims dims;
  std::uint64_t vocab_hash = 0;
  Tensor embeddings;
  GruCell word_enc;
  GruCell utt_enc;
  Tensor out_w;  // [2, h]
  Tensor out_b;  // [2]

  static DiscriminatorModel create(const Vocab& vocab, ModelDims dims, std::uint64_t seed);
  static DiscriminatorModel create_zero(const Vocab& vocab, ModelDims dims);
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
};

// Q+({x,y}) in (0,1); context utterances first, response last. y may be a
// partial sequence of length >= 1.
Tensor discriminator_score_t(const DiscriminatorModel& disc, const Context& x,
                             const std::vector<int>& y);
double discriminator_score(const DiscriminatorModel& disc, const Context& x,
                           const std::vector<int>& y);

// ---- critic: hierarchical encoder + scalar head ----

struct CriticModel {
  std::size_t vocab_size = 0;
  ModelDims dims;
  std::uint64_t vocab_hash = 0;
  Tensor embeddings;
  GruCell word_enc;
  GruCell utt_enc;
  Tensor out_w;  // [1, h]
  Tensor out_b;  // [1]

  static CriticModel create(const Vocab& vocab, ModelDims dims, std::uint64_t seed);
  static CriticModel create_zero(const Vocab& vocab, ModelDims dims);
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
};

// Baseline b(x, y_prefix); y_prefix may be empty (value of the bare history).
Tensor critic_value_t(const CriticModel& critic, const Context& x,
                      const std::vector<int>& y_prefix);
double critic_value(const CriticModel& critic, const Context& x,
                    const std::vector<int>& y_prefix);

// ---- unconditional language model ----

struct LanguageModel {
  std::size_t vocab_size = 0;
  ModelDims dims;
  std::uint64_t vocab_hash = 0;
  Tensor embeddings;
  GruCell cell;
  Tensor out_w;  // [V, h]
  Tensor out_b;  // [V]

  static LanguageModel create(const Vocab& vocab, ModelDims dims, std::uint64_t seed);
  static LanguageModel create_zero(const Vocab& vocab, ModelDims dims);
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
};

std::vector<Tensor> lm_step_probs(const LanguageModel& lm, const std::vector<int>& y);
Tensor lm_nll(const LanguageModel& lm, const std::vector<int>& y);
double lm_log_prob(const LanguageModel& lm, const std::vector<int>& y);  // 0.0 for empty y
// (state, prob row) for incremental scoring during decoding
std::pair<Tensor, Tensor> lm_step(const LanguageModel& lm, int prev_token, const Tensor& state);

// ---- checkpoints ----
//
// Versioned text container: kind, vocab hash, config hash, then one named
// parameter per record with shape and row-major values.
struct Checkpoint {
  std::string kind;
  std::uint64_t vocab_hash = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>>>
      entries;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  const std::pair<std::vector<std::size_t>, std::vector<double>>& find(
      const std::string& name) const;
};

Checkpoint make_checkpoint(const std::string& kind, std::uint64_t vocab_hash,
                           std::uint64_t config_hash,
                           const std::vector<std::pair<std::string, Tensor>>& params);

// Loaders verify kind and vocab hash ("VocabHashMismatch" on disagreement).
GeneratorModel load_generator(const Checkpoint& ckpt, const Vocab& vocab);
DiscriminatorModel load_discriminator(const Checkpoint& ckpt, const Vocab& vocab);
CriticModel load_critic(const Checkpoint& ckpt, const Vocab& vocab);
LanguageModel load_language_model(const Checkpoint& ckpt, const Vocab& vocab);

}  // namespace advdial
