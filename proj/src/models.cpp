#include "advdial/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace advdial {

namespace {

Tensor init_tensor(std::vector<std::size_t> shape, Rng& rng) {
  return Tensor::uniform(std::move(shape), rng, -kInitRange, kInitRange, true);
}

Tensor classifier_init(std::vector<std::size_t> shape, Rng& rng) {
  return Tensor::uniform(std::move(shape), rng, -kClassifierInitRange, kClassifierInitRange,
                         true);
}

GruCell create_classifier_cell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  GruCell c;
  c.wz = classifier_init({hidden_dim, input_dim}, rng);
  c.uz = classifier_init({hidden_dim, hidden_dim}, rng);
  c.bz = classifier_init({hidden_dim}, rng);
  c.wr = classifier_init({hidden_dim, input_dim}, rng);
  c.ur = classifier_init({hidden_dim, hidden_dim}, rng);
  c.br = classifier_init({hidden_dim}, rng);
  c.wh = classifier_init({hidden_dim, input_dim}, rng);
  c.uh = classifier_init({hidden_dim, hidden_dim}, rng);
  c.bh = classifier_init({hidden_dim}, rng);
  return c;
}

void check_token(int tok, std::size_t vocab_size) {
  if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size) throw Error("TokenOutOfVocab");
}

// word-level encode: final GRU state over the utterance's embeddings
template <typename M>
Tensor encode_utterance(const M& model, const GruCell& cell, const std::vector<int>& utt) {
  Tensor h = Tensor::zeros({model.dims.hidden});
  for (int tok : utt) {
    check_token(tok, model.vocab_size);
    h = cell.step(row(model.embeddings, static_cast<std::size_t>(tok)), h);
  }
  return h;
}

// hierarchical encode shared by discriminator and critic; y may be empty
template <typename M>
Tensor encode_dialogue(const M& model, const Context& x, const std::vector<int>& y) {
  Tensor h = Tensor::zeros({model.dims.hidden});
  for (const auto& utt : x)
    h = model.utt_enc.step(encode_utterance(model, model.word_enc, utt), h);
  if (!y.empty())
    h = model.utt_enc.step(encode_utterance(model, model.word_enc, y), h);
  return h;
}

}  // namespace

GruCell GruCell::create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  GruCell c;
  c.wz = init_tensor({hidden_dim, input_dim}, rng);
  c.uz = init_tensor({hidden_dim, hidden_dim}, rng);
  c.bz = init_tensor({hidden_dim}, rng);
  c.wr = init_tensor({hidden_dim, input_dim}, rng);
  c.ur = init_tensor({hidden_dim, hidden_dim}, rng);
  c.br = init_tensor({hidden_dim}, rng);
  c.wh = init_tensor({hidden_dim, input_dim}, rng);
  c.uh = init_tensor({hidden_dim, hidden_dim}, rng);
  c.bh = init_tensor({hidden_dim}, rng);
  return c;
}

GruCell GruCell::create_zero(std::size_t input_dim, std::size_t hidden_dim) {
  GruCell c;
  c.wz = Tensor::zeros({hidden_dim, input_dim}, true);
  c.uz = Tensor::zeros({hidden_dim, hidden_dim}, true);
  c.bz = Tensor::zeros({hidden_dim}, true);
  c.wr = Tensor::zeros({hidden_dim, input_dim}, true);
  c.ur = Tensor::zeros({hidden_dim, hidden_dim}, true);
  c.br = Tensor::zeros({hidden_dim}, true);
  c.wh = Tensor::zeros({hidden_dim, input_dim}, true);
  c.uh = Tensor::zeros({hidden_dim, hidden_dim}, true);
  c.bh = Tensor::zeros({hidden_dim}, true);
  return c;
}

Tensor GruCell::step(const Tensor& x, const Tensor& h) const {
  Tensor z = sigmoid(add(add(matvec(wz, x), matvec(uz, h)), bz));
  Tensor r = sigmoid(add(add(matvec(wr, x), matvec(ur, h)), br));
  Tensor cand = tanh(add(add(matvec(wh, x), matvec(uh, mul(r, h))), bh));
  Tensor keep = mul(sub(Tensor::full(z.shape(), 1.0), z), h);
  return add(keep, mul(z, cand));
}

void GruCell::collect(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".wz", wz);
  out.emplace_back(prefix + ".uz", uz);
  out.emplace_back(prefix + ".bz", bz);
  out.emplace_back(prefix + ".wr", wr);
  out.emplace_back(prefix + ".ur", ur);
  out.emplace_back(prefix + ".br", br);
  out.emplace_back(prefix + ".wh", wh);
  out.emplace_back(prefix + ".uh", uh);
  out.emplace_back(prefix + ".bh", bh);
}

// ---- generator ----

GeneratorModel GeneratorModel::create(const Vocab& vocab, ModelDims dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x67656eULL}));
  GeneratorModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = init_tensor({m.vocab_size, dims.embed}, rng);
  m.encoder = GruCell::create(dims.embed, dims.hidden, rng);
  m.decoder = GruCell::create(dims.embed, dims.hidden, rng);
  m.attn = init_tensor({dims.hidden, dims.hidden}, rng);
  m.out_w = init_tensor({m.vocab_size, 2 * dims.hidden}, rng);
  m.out_b = init_tensor({m.vocab_size}, rng);
  return m;
}

GeneratorModel GeneratorModel::create_zero(const Vocab& vocab, ModelDims dims) {
  GeneratorModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = Tensor::zeros({m.vocab_size, dims.embed}, true);
  m.encoder = GruCell::create_zero(dims.embed, dims.hidden);
  m.decoder = GruCell::create_zero(dims.embed, dims.hidden);
  m.attn = Tensor::zeros({dims.hidden, dims.hidden}, true);
  m.out_w = Tensor::zeros({m.vocab_size, 2 * dims.hidden}, true);
  m.out_b = Tensor::zeros({m.vocab_size}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> GeneratorModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("gen.embeddings", embeddings);
  encoder.collect("gen.encoder", out);
  decoder.collect("gen.decoder", out);
  out.emplace_back("gen.attn", attn);
  out.emplace_back("gen.out_w", out_w);
  out.emplace_back("gen.out_b", out_b);
  return out;
}

std::vector<Tensor> GeneratorModel::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

EncodedContext encode_context(const GeneratorModel& gen, const Context& context) {
  EncodedContext enc;
  Tensor h = Tensor::zeros({gen.dims.hidden});
  for (const auto& utt : context) {
    for (int tok : utt) {
      check_token(tok, gen.vocab_size);
      h = gen.encoder.step(row(gen.embeddings, static_cast<std::size_t>(tok)), h);
      enc.states.push_back(h);
      enc.attn_keys.push_back(matvec(gen.attn, h));
    }
  }
  enc.final_state = h;
  return enc;
}

std::pair<Tensor, Tensor> decoder_step(const GeneratorModel& gen, const EncodedContext& enc,
                                       int prev_token, const Tensor& state) {
  check_token(prev_token, gen.vocab_size);
  Tensor h = gen.decoder.step(row(gen.embeddings, static_cast<std::size_t>(prev_token)), state);
  Tensor ctx_vec;
  if (enc.states.empty()) {
    ctx_vec = Tensor::zeros({gen.dims.hidden});
  } else {
    std::vector<Tensor> scores;
    scores.reserve(enc.states.size());
    for (const auto& key : enc.attn_keys) scores.push_back(dot(h, key));
    Tensor weights = softmax(stack_scalars(scores));
    ctx_vec = weighted_sum(enc.states, weights);
  }
  Tensor logits = add(matvec(gen.out_w, concat(h, ctx_vec)), gen.out_b);
  return {h, softmax(logits)};
}

std::vector<Tensor> generator_step_probs(const GeneratorModel& gen, const Context& x,
                                         const std::vector<int>& y) {
  if (y.empty()) throw Error("EmptyResponse");
  for (int tok : y) check_token(tok, gen.vocab_size);
  EncodedContext enc = encode_context(gen, x);
  Tensor state = enc.final_state;
  std::vector<Tensor> rows;
  rows.reserve(y.size());
  int prev = Vocab::kBos;
  for (int tok : y) {
    auto [next_state, probs] = decoder_step(gen, enc, prev, state);
    rows.push_back(probs);
    state = next_state;
    prev = tok;
  }
  return rows;
}

Tensor generator_nll(const GeneratorModel& gen, const Context& x, const std::vector<int>& y) {
  return sequence_nll(stack_rows(generator_step_probs(gen, x, y)), y);
}

std::vector<double> generator_log_prob(const GeneratorModel& gen, const Context& x,
                                       const std::vector<int>& y) {
  auto rows = generator_step_probs(gen, x, y);
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t)
    out.push_back(std::log(rows[t].at(static_cast<std::size_t>(y[t]))));
  return out;
}

Tensor generator_weighted_log_prob(const GeneratorModel& gen, const Context& x,
                                   const std::vector<int>& y,
                                   const std::vector<double>& weights) {
  if (weights.size() != y.size()) throw Error("ShapeMismatch");
  auto rows = generator_step_probs(gen, x, y);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < y.size(); ++t) {
    Tensor lp = log(pick(rows[t], static_cast<std::size_t>(y[t])));
    total = add(total, mul_scalar(lp, weights[t]));
  }
  return total;
}

// ---- discriminator ----

DiscriminatorModel DiscriminatorModel::create(const Vocab& vocab, ModelDims dims,
                                              std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x64697363ULL}));
  DiscriminatorModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = classifier_init({m.vocab_size, dims.embed}, rng);
  m.word_enc = create_classifier_cell(dims.embed, dims.hidden, rng);
  m.utt_enc = create_classifier_cell(dims.hidden, dims.hidden, rng);
  m.out_w = classifier_init({2, dims.hidden}, rng);
  m.out_b = classifier_init({2}, rng);
  return m;
}

DiscriminatorModel DiscriminatorModel::create_zero(const Vocab& vocab, ModelDims dims) {
  DiscriminatorModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = Tensor::zeros({m.vocab_size, dims.embed}, true);
  m.word_enc = GruCell::create_zero(dims.embed, dims.hidden);
  m.utt_enc = GruCell::create_zero(dims.hidden, dims.hidden);
  m.out_w = Tensor::zeros({2, dims.hidden}, true);
  m.out_b = Tensor::zeros({2}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> DiscriminatorModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("disc.embeddings", embeddings);
  word_enc.collect("disc.word_enc", out);
  utt_enc.collect("disc.utt_enc", out);
  out.emplace_back("disc.out_w", out_w);
  out.emplace_back("disc.out_b", out_b);
  return out;
}

std::vector<Tensor> DiscriminatorModel::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

Tensor discriminator_score_t(const DiscriminatorModel& disc, const Context& x,
                             const std::vector<int>& y) {
  if (y.empty()) throw Error("EmptyResponse");
  Tensor h = encode_dialogue(disc, x, y);
  Tensor probs = softmax(add(matvec(disc.out_w, h), disc.out_b));
  return pick(probs, 1);  // index 1 = human-generated
}

double discriminator_score(const DiscriminatorModel& disc, const Context& x,
                           const std::vector<int>& y) {
  return discriminator_score_t(disc, x, y).item();
}

// ---- critic ----

CriticModel CriticModel::create(const Vocab& vocab, ModelDims dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x637269ULL}));
  CriticModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = classifier_init({m.vocab_size, dims.embed}, rng);
  m.word_enc = create_classifier_cell(dims.embed, dims.hidden, rng);
  m.utt_enc = create_classifier_cell(dims.hidden, dims.hidden, rng);
  m.out_w = classifier_init({1, dims.hidden}, rng);
  m.out_b = classifier_init({1}, rng);
  return m;
}

CriticModel CriticModel::create_zero(const Vocab& vocab, ModelDims dims) {
  CriticModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = Tensor::zeros({m.vocab_size, dims.embed}, true);
  m.word_enc = GruCell::create_zero(dims.embed, dims.hidden);
  m.utt_enc = GruCell::create_zero(dims.hidden, dims.hidden);
  m.out_w = Tensor::zeros({1, dims.hidden}, true);
  m.out_b = Tensor::zeros({1}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> CriticModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("critic.embeddings", embeddings);
  word_enc.collect("critic.word_enc", out);
  utt_enc.collect("critic.utt_enc", out);
  out.emplace_back("critic.out_w", out_w);
  out.emplace_back("critic.out_b", out_b);
  return out;
}

std::vector<Tensor> CriticModel::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

Tensor critic_value_t(const CriticModel& critic, const Context& x,
                      const std::vector<int>& y_prefix) {
  Tensor h = encode_dialogue(critic, x, y_prefix);
  return pick(add(matvec(critic.out_w, h), critic.out_b), 0);
}

double critic_value(const CriticModel& critic, const Context& x,
                    const std::vector<int>& y_prefix) {
  return critic_value_t(critic, x, y_prefix).item();
}

// ---- language model ----

LanguageModel LanguageModel::create(const Vocab& vocab, ModelDims dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x6c6dULL}));
  LanguageModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = init_tensor({m.vocab_size, dims.embed}, rng);
  m.cell = GruCell::create(dims.embed, dims.hidden, rng);
  m.out_w = init_tensor({m.vocab_size, dims.hidden}, rng);
  m.out_b = init_tensor({m.vocab_size}, rng);
  return m;
}

LanguageModel LanguageModel::create_zero(const Vocab& vocab, ModelDims dims) {
  LanguageModel m;
  m.vocab_size = vocab.size();
  m.dims = dims;
  m.vocab_hash = vocab.hash();
  m.embeddings = Tensor::zeros({m.vocab_size, dims.embed}, true);
  m.cell = GruCell::create_zero(dims.embed, dims.hidden);
  m.out_w = Tensor::zeros({m.vocab_size, dims.hidden}, true);
  m.out_b = Tensor::zeros({m.vocab_size}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> LanguageModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("lm.embeddings", embeddings);
  cell.collect("lm.cell", out);
  out.emplace_back("lm.out_w", out_w);
  out.emplace_back("lm.out_b", out_b);
  return out;
}

std::vector<Tensor> LanguageModel::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

std::pair<Tensor, Tensor> lm_step(const LanguageModel& lm, int prev_token, const Tensor& state) {
  check_token(prev_token, lm.vocab_size);
  Tensor h = lm.cell.step(row(lm.embeddings, static_cast<std::size_t>(prev_token)), state);
  Tensor probs = softmax(add(matvec(lm.out_w, h), lm.out_b));
  return {h, probs};
}

std::vector<Tensor> lm_step_probs(const LanguageModel& lm, const std::vector<int>& y) {
  std::vector<Tensor> rows;
  rows.reserve(y.size());
  Tensor state = Tensor::zeros({lm.dims.hidden});
  int prev = Vocab::kBos;
  for (int tok : y) {
    check_token(tok, lm.vocab_size);
    auto [next_state, probs] = lm_step(lm, prev, state);
    rows.push_back(probs);
    state = next_state;
    prev = tok;
  }
  return rows;
}

Tensor lm_nll(const LanguageModel& lm, const std::vector<int>& y) {
  if (y.empty()) throw Error("EmptyResponse");
  return sequence_nll(stack_rows(lm_step_probs(lm, y)), y);
}

double lm_log_prob(const LanguageModel& lm, const std::vector<int>& y) {
  if (y.empty()) return 0.0;
  return -lm_nll(lm, y).item();
}

// ---- checkpoints ----

namespace {
constexpr const char* kCkptMagic = "advdial-checkpoint v1";
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError: cannot write " + path);
  out << kCkptMagic << "\n";
  out << "kind " << kind << "\n";
  out << "vocab_hash " << to_hex(vocab_hash) << "\n";
  out << "config_hash " << to_hex(config_hash) << "\n";
  for (const auto& [name, sv] : entries) {
    out << "param " << name;
    for (std::size_t d : sv.first) out << " " << d;
    out << "\n";
    const auto& vals = sv.second;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      out << format_double(vals[i]);
      out << (i + 1 == vals.size() ? "\n" : " ");
    }
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCkptMagic)
    throw Error("BadCheckpointFormat: " + path);
  Checkpoint c;
  while (std::getline(in, line)) {
    std::istringstream iss(line);
    std::string tag;
    iss >> tag;
    if (tag == "kind") {
      iss >> c.kind;
    } else if (tag == "vocab_hash") {
      std::string h;
      iss >> h;
      c.vocab_hash = std::stoull(h, nullptr, 16);
    } else if (tag == "config_hash") {
      std::string h;
      iss >> h;
      c.config_hash = std::stoull(h, nullptr, 16);
    } else if (tag == "param") {
      std::string name;
      iss >> name;
      std::vector<std::size_t> shape;
      std::size_t d;
      while (iss >> d) shape.push_back(d);
      std::size_t n = 1;
      for (std::size_t s : shape) n *= s;
      std::vector<double> vals(n);
      std::string data;
      if (!std::getline(in, data)) throw Error("BadCheckpointFormat: " + path);
      std::istringstream ds(data);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(ds >> vals[i])) throw Error("BadCheckpointFormat: " + path);
      }
      c.entries.emplace_back(name, std::make_pair(std::move(shape), std::move(vals)));
    } else if (!tag.empty()) {
      throw Error("BadCheckpointFormat: " + path);
    }
  }
  return c;
}

const std::pair<std::vector<std::size_t>, std::vector<double>>& Checkpoint::find(
    const std::string& name) const {
  for (const auto& [n, sv] : entries) {
    if (n == name) return sv;
  }
  throw Error("MissingParameter: " + name);
}

Checkpoint make_checkpoint(const std::string& kind, std::uint64_t vocab_hash,
                           std::uint64_t config_hash,
                           const std::vector<std::pair<std::string, Tensor>>& params) {
  Checkpoint c;
  c.kind = kind;
  c.vocab_hash = vocab_hash;
  c.config_hash = config_hash;
  for (const auto& [name, t] : params)
    c.entries.emplace_back(name, std::make_pair(t.shape(), t.values()));
  return c;
}

namespace {

void check_ckpt(const Checkpoint& ckpt, const std::string& kind, const Vocab& vocab) {
  if (ckpt.kind != kind) throw Error("CheckpointKindMismatch: " + ckpt.kind);
  if (ckpt.vocab_hash != vocab.hash()) throw Error("VocabHashMismatch");
}

void restore(const Checkpoint& ckpt, const std::string& name, Tensor t) {
  const auto& [shape, vals] = ckpt.find(name);
  if (shape != t.shape()) throw Error("CheckpointShapeMismatch: " + name);
  t.values() = vals;
}

template <typename M>
void restore_all(const Checkpoint& ckpt, M& model) {
  for (auto& [name, t] : model.named_params()) restore(ckpt, name, t);
}

std::size_t embed_dim_from(const Checkpoint& ckpt, const std::string& emb_name) {
  return ckpt.find(emb_name).first[1];
}

}  // namespace

GeneratorModel load_generator(const Checkpoint& ckpt, const Vocab& vocab) {
  check_ckpt(ckpt, "generator", vocab);
  ModelDims dims{embed_dim_from(ckpt, "gen.embeddings"), ckpt.find("gen.attn").first[0]};
  GeneratorModel m = GeneratorModel::create_zero(vocab, dims);
  restore_all(ckpt, m);
  return m;
}

DiscriminatorModel load_discriminator(const Checkpoint& ckpt, const Vocab& vocab) {
  check_ckpt(ckpt, "discriminator", vocab);
  ModelDims dims{embed_dim_from(ckpt, "disc.embeddings"), ckpt.find("disc.out_w").first[1]};
  DiscriminatorModel m = DiscriminatorModel::create_zero(vocab, dims);
  restore_all(ckpt, m);
  return m;
}

CriticModel load_critic(const Checkpoint& ckpt, const Vocab& vocab) {
  check_ckpt(ckpt, "critic", vocab);
  ModelDims dims{embed_dim_from(ckpt, "critic.embeddings"), ckpt.find("critic.out_w").first[1]};
  CriticModel m = CriticModel::create_zero(vocab, dims);
  restore_all(ckpt, m);
  return m;
}

LanguageModel load_language_model(const Checkpoint& ckpt, const Vocab& vocab) {
  check_ckpt(ckpt, "lm", vocab);
  ModelDims dims{embed_dim_from(ckpt, "lm.embeddings"), ckpt.find("lm.out_w").first[1]};
  LanguageModel m = LanguageModel::create_zero(vocab, dims);
  restore_all(ckpt, m);
  return m;
}

}  // namespace advdial
