#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "prompting.hpp"
#include "rng.hpp"

namespace icxlt {

// Token inventory for the toy model. Built over the whole dataset (every
// language's splits), mirroring a multilingual pretraining vocabulary: tokens
// of languages never seen in training keep stable randomly-initialized
// embeddings instead of collapsing onto <unk>, which is what lets one-shot
// context adaptation act on them at all.
struct Vocab {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> label_vocab;  // canonical label order; head id N = EOS
  int pad_id = 0;
  int unk_id = 1;
  // Ids of the template separator tokens, resolved at build time so the model
  // can recover demonstration boundaries from the id stream alone.
  int example_sep_id = -1;
  int io_sep_id = -1;
  int label_sep_id = -1;
  int eos_marker_id = -1;

  int id(const std::string& token) const;
  int size() const { return static_cast<int>(id_to_token.size()); }
  int head_size() const { return static_cast<int>(label_vocab.size()) + 1; }
  int eos_head_id() const { return static_cast<int>(label_vocab.size()); }
  int label_head_id(const std::string& label) const;  // -1 when unknown
  int label_token_id(const std::string& label) const;

  static Vocab build(const Dataset& ds, const PromptTemplate& tmpl);
  std::string to_json() const;
  static Vocab from_json(const std::string& text);
};

struct Tensor {
  int rows = 0, cols = 0;
  std::vector<double> w;

  void resize(int r, int c) { rows = r; cols = c; w.assign(static_cast<std::size_t>(r) * c, 0.0); }
  double& at(int r, int c) { return w[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return w[static_cast<std::size_t>(r) * cols + c]; }
};

// Encoder-decoder with one self-attention layer.
//
// Encoding of token ids t_1..t_T:
//   x_p = emb[t_p] (+ label tag, below)
//   q_p = x_p Wq,  k_p = x_p Wk,  v_p = x_p Wv
//   A_pq = softmax_q(q_p . k_q / sqrt(d))
//   z_p = sum_q A_pq v_q
//   h_p = relu(z_p W1) W2
//   c   = mean_p h_p
//
// Label tag: the prompt splits into demonstration segments (each ending at an
// example_sep token) and the trailing input segment. Inside a demonstration,
// positions before its io_sep token receive an additive tag: the mean
// embedding of that demonstration's label tokens. This hands the encoder the
// text-to-label binding of each demonstration, which mean pooling would
// otherwise erase; the input segment gets no tag.
//
// Decoding step t, with e_1..e_{t-1} the previously emitted labels:
//   u_t = c + sum_j emb[token(e_j)]
//   logits_t = u_t Whead            (head columns: labels in canonical order, then EOS)
struct ModelParams {
  int d = 0, d_ff = 0, vocab_size = 0, n_labels = 0;
  Tensor emb;        // V x d
  Tensor wq, wk, wv; // d x d
  Tensor w1;         // d x d_ff
  Tensor w2;         // d_ff x d
  Tensor head;       // d x (n_labels + 1)

  std::vector<Tensor*> tensors() { return {&emb, &wq, &wk, &wv, &w1, &w2, &head}; }
  std::vector<const Tensor*> tensors() const { return {&emb, &wq, &wk, &wv, &w1, &w2, &head}; }
  bool same_shape(const ModelParams& o) const;
};

// Uniform init in [-0.1/sqrt(d), +0.1/sqrt(d)], filled tensor by tensor in
// declaration order, row-major, from the key's stream.
ModelParams init_params(int vocab_size, int n_labels, int d, int d_ff, const RngKey& key);

// One encoded training/eval instance.
struct ModelInstance {
  std::vector<int> tokens;   // encoder input ids
  std::vector<int> targets;  // teacher-forced head ids: gold labels (canonical order) + EOS
};

ModelInstance encode_instance(const RenderedInstance& inst, const Vocab& vocab,
                              const PromptTemplate& tmpl);
std::vector<int> encode_prompt(const std::string& prompt, const Vocab& vocab,
                               const PromptTemplate& tmpl);

// Mean token-level cross-entropy over the batch; grads (if non-null) receives
// d(loss)/d(params) with matching shapes.
double loss_and_grad(const ModelParams& params, const Vocab& vocab,
                     const std::vector<ModelInstance>& batch, ModelParams* grads);

// Greedy rollout. Returns the logits row emitted at every step, including the
// step that produced EOS; emitted holds the chosen head ids without EOS.
// Argmax ties resolve to the lowest head id.
struct Rollout {
  std::vector<std::vector<double>> step_logits;
  std::vector<int> emitted;
};
Rollout forward_rollout(const ModelParams& params, const Vocab& vocab,
                        const std::vector<int>& tokens, int max_steps);

std::vector<int> generate_greedy(const ModelParams& params, const Vocab& vocab,
                                 const std::vector<int>& tokens, int max_steps);

std::vector<std::string> decode_labels(const std::vector<int>& head_ids, const Vocab& vocab);

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 20;
  int batch_size = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool linear_decay = false;  // constant schedule by default
  int d = 64;
  int d_ff = 128;
  bool select_on_dev = false;
  // Unsupervised embedding warm-up before supervised training; 0 skips it.
  int pretrain_epochs = 0;
  double pretrain_lr = 0.05;
  int pretrain_negatives = 4;
};

struct TrainStats {
  std::vector<double> epoch_mean_loss;
  int selected_epoch = -1;  // set when dev selection picked a snapshot
};

// Fresh init + Adam. Instance order reshuffles every epoch from the key.
// Batches travel the shuffled order; gradients are averaged per batch.
// Divergence (non-finite loss or parameter) aborts with a numeric error.
ModelParams train(const std::vector<ModelInstance>& instances, const Vocab& vocab,
                  const TrainConfig& config, const RngKey& key,
                  const std::vector<ModelInstance>& dev = {}, TrainStats* stats = nullptr);

// Same loop as train() but starting from caller-supplied parameters instead
// of a fresh init (dev selection and stats still apply).
ModelParams train_from(ModelParams start, const std::vector<ModelInstance>& instances,
                       const Vocab& vocab, const TrainConfig& config, const RngKey& key,
                       const std::vector<ModelInstance>& dev = {}, TrainStats* stats = nullptr);

// Skip-gram warm-up of the embedding table on raw token sequences: every
// ordered pair inside a sequence is a positive, negatives drawn uniformly
// from the ids the corpus contains. Only emb changes; the other tensors are
// untouched. This is the stand-in for multilingual pretraining: tokens that
// co-occur end up near each other, so tokens absent from supervised training
// still carry a geometry the attention layer can match at evaluation time.
void pretrain_embeddings(ModelParams& params, const Vocab& vocab,
                         const std::vector<std::vector<int>>& texts,
                         const TrainConfig& config, const RngKey& key);

// Continued training from existing params (fresh Adam state). When aux is
// non-empty the per-step loss is beta * L(aux batch) + (1 - beta) * L(batch),
// with aux batches cycling independently; beta = 1 reduces to aux-only
// updates, beta = 0 (or empty aux) to plain fine-tuning.
void fine_tune(ModelParams& params, const Vocab& vocab, const std::vector<ModelInstance>& instances,
               const std::vector<ModelInstance>& aux, double beta, const TrainConfig& config,
               const RngKey& key, TrainStats* stats = nullptr);

// Model directory: params.bin (magic "ICXM1", little-endian int32 shapes,
// row-major float32 tensors), vocab.json, config.json (template + metadata).
struct Model {
  ModelParams params;
  Vocab vocab;
  PromptTemplate tmpl;
  std::string meta_json;  // free-form, preserved round-trip
};

void save_model(const Model& model, const std::string& dir);
Model load_model(const std::string& dir);

// Byte image of the float32 serialization, for change detection.
std::vector<unsigned char> params_bytes(const ModelParams& params);

}  // namespace icxlt
