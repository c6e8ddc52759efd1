#include "toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <set>

#include <json.hpp>

#include "util.hpp"

namespace icxlt {

using nlohmann::json;

int Vocab::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? unk_id : it->second;
}

int Vocab::label_head_id(const std::string& label) const {
  auto it = std::lower_bound(label_vocab.begin(), label_vocab.end(), label);
  if (it == label_vocab.end() || *it != label) return -1;
  return static_cast<int>(it - label_vocab.begin());
}

int Vocab::label_token_id(const std::string& label) const { return id(label); }

Vocab Vocab::build(const Dataset& ds, const PromptTemplate& tmpl) {
  tmpl.validate();
  Vocab v;
  v.id_to_token = {"<pad>", "<unk>", tmpl.example_sep, tmpl.io_sep, tmpl.label_sep,
                   tmpl.eos_marker};
  v.example_sep_id = 2;
  v.io_sep_id = 3;
  v.label_sep_id = 4;
  v.eos_marker_id = 5;

  std::set<std::string> content;
  auto add_text_tokens = [&](const std::string& text) {
    for (auto& tok : tokenize_prompt(sanitize_text(text, tmpl), tmpl)) content.insert(tok);
  };
  for (const auto& [lang, split] : ds.splits)
    for (const auto* vec : {&split.train, &split.test, &split.dev})
      for (const auto& ex : *vec) add_text_tokens(ex.text);
  for (const auto& label : ds.label_set) {
    content.insert(label);  // whole label, used by the decoder prefix
    add_text_tokens(label); // word pieces as they appear inside prompts
  }

  for (const auto& tok : content) {
    if (std::find(v.id_to_token.begin(), v.id_to_token.end(), tok) == v.id_to_token.end())
      v.id_to_token.push_back(tok);
  }
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  v.label_vocab = ds.label_set;
  return v;
}

std::string Vocab::to_json() const {
  json j;
  j["tokens"] = id_to_token;
  j["labels"] = label_vocab;
  j["pad_id"] = pad_id;
  j["unk_id"] = unk_id;
  j["example_sep_id"] = example_sep_id;
  j["io_sep_id"] = io_sep_id;
  j["label_sep_id"] = label_sep_id;
  j["eos_marker_id"] = eos_marker_id;
  return j.dump(2) + "\n";
}

Vocab Vocab::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrKind::Data, std::string("invalid vocab json: ") + e.what());
  }
  Vocab v;
  v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  v.label_vocab = j.at("labels").get<std::vector<std::string>>();
  v.pad_id = j.at("pad_id").get<int>();
  v.unk_id = j.at("unk_id").get<int>();
  v.example_sep_id = j.at("example_sep_id").get<int>();
  v.io_sep_id = j.at("io_sep_id").get<int>();
  v.label_sep_id = j.at("label_sep_id").get<int>();
  v.eos_marker_id = j.at("eos_marker_id").get<int>();
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  return v;
}

bool ModelParams::same_shape(const ModelParams& o) const {
  return d == o.d && d_ff == o.d_ff && vocab_size == o.vocab_size && n_labels == o.n_labels;
}

ModelParams init_params(int vocab_size, int n_labels, int d, int d_ff, const RngKey& key) {
  if (vocab_size <= 0 || n_labels <= 0 || d <= 0 || d_ff <= 0)
    fail(ErrKind::Config, "init_params: all dimensions must be positive");
  ModelParams p;
  p.d = d;
  p.d_ff = d_ff;
  p.vocab_size = vocab_size;
  p.n_labels = n_labels;
  p.emb.resize(vocab_size, d);
  p.wq.resize(d, d);
  p.wk.resize(d, d);
  p.wv.resize(d, d);
  p.w1.resize(d, d_ff);
  p.w2.resize(d_ff, d);
  p.head.resize(d, n_labels + 1);

  Rng rng = Rng(key).split("init");
  const double bound = 0.1 / std::sqrt(static_cast<double>(d));
  for (Tensor* t : p.tensors())
    for (double& w : t->w) w = rng.uniform_range(-bound, bound);
  return p;
}

ModelInstance encode_instance(const RenderedInstance& inst, const Vocab& vocab,
                              const PromptTemplate& tmpl) {
  ModelInstance out;
  out.tokens = encode_prompt(inst.prompt, vocab, tmpl);
  if (!inst.target.empty()) {
    std::size_t start = 0;
    while (true) {
      std::size_t pos = inst.target.find(tmpl.label_sep, start);
      std::string label = inst.target.substr(start, pos == std::string::npos ? pos : pos - start);
      int hid = vocab.label_head_id(label);
      if (hid < 0) fail(ErrKind::Data, "gold label outside label set: '" + label + "'");
      out.targets.push_back(hid);
      if (pos == std::string::npos) break;
      start = pos + tmpl.label_sep.size();
    }
  }
  out.targets.push_back(vocab.eos_head_id());
  return out;
}

std::vector<int> encode_prompt(const std::string& prompt, const Vocab& vocab,
                               const PromptTemplate& tmpl) {
  std::vector<int> ids;
  for (const auto& tok : tokenize_prompt(prompt, tmpl)) ids.push_back(vocab.id(tok));
  if (ids.empty()) fail(ErrKind::Data, "cannot encode an empty prompt");
  return ids;
}

namespace {

// ---- encoder internals ----

struct Segmentation {
  std::vector<int> tag_of_pos;                    // -1 = untouched position
  std::vector<std::vector<int>> label_positions;  // per tag
};

Segmentation segment_prompt(const std::vector<int>& toks, const Vocab& v) {
  Segmentation seg;
  const int T = static_cast<int>(toks.size());
  seg.tag_of_pos.assign(static_cast<std::size_t>(T), -1);
  int start = 0;
  for (int p = 0; p < T; ++p) {
    if (toks[static_cast<std::size_t>(p)] != v.example_sep_id) continue;
    // demonstration segment [start, p)
    int io = -1;
    for (int q = start; q < p; ++q)
      if (toks[static_cast<std::size_t>(q)] == v.io_sep_id) {
        io = q;
        break;
      }
    if (io >= 0) {
      std::vector<int> labels;
      for (int q = io + 1; q < p; ++q) {
        int t = toks[static_cast<std::size_t>(q)];
        if (t == v.label_sep_id || t == v.io_sep_id || t == v.eos_marker_id ||
            t == v.example_sep_id)
          continue;
        labels.push_back(q);
      }
      if (!labels.empty() && io > start) {
        int tag = static_cast<int>(seg.label_positions.size());
        seg.label_positions.push_back(std::move(labels));
        for (int q = start; q < io; ++q) seg.tag_of_pos[static_cast<std::size_t>(q)] = tag;
      }
    }
    start = p + 1;
  }
  return seg;
}

struct EncoderCache {
  int T = 0;
  Segmentation seg;
  std::vector<double> X, Q, K, V, A, Z, P1;  // X,Q,K,V,Z: T x d; A: T x T; P1: T x d_ff
  std::vector<double> c;                     // d
};

// out (n x k) = a (n x m) * b (m x k), all row-major
void matmul(const double* a, const double* b, double* out, int n, int m, int k) {
  std::fill(out, out + static_cast<std::size_t>(n) * k, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * m;
    double* orow = out + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < m; ++j) {
      const double aij = arow[j];
      if (aij == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(j) * k;
      for (int l = 0; l < k; ++l) orow[l] += aij * brow[l];
    }
  }
}

// out (n x k) += a^T (n x m stored as m x n) * b (m x k)
void matmul_at_b_add(const double* a, const double* b, double* out, int m, int n, int k) {
  for (int j = 0; j < m; ++j) {
    const double* arow = a + static_cast<std::size_t>(j) * n;
    const double* brow = b + static_cast<std::size_t>(j) * k;
    for (int i = 0; i < n; ++i) {
      const double aji = arow[i];
      if (aji == 0.0) continue;
      double* orow = out + static_cast<std::size_t>(i) * k;
      for (int l = 0; l < k; ++l) orow[l] += aji * brow[l];
    }
  }
}

// out (n x m) = a (n x k) * b^T (k x m stored as m x k)
void matmul_b_t(const double* a, const double* b, double* out, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* orow = out + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      orow[j] = acc;
    }
  }
}

void encode_forward(const ModelParams& p, const Vocab& v, const std::vector<int>& toks,
                    EncoderCache& cache) {
  const int T = static_cast<int>(toks.size());
  const int d = p.d, dff = p.d_ff;
  if (T == 0) fail(ErrKind::Data, "encoder got an empty token sequence");
  cache.T = T;
  cache.seg = segment_prompt(toks, v);

  cache.X.assign(static_cast<std::size_t>(T) * d, 0.0);
  std::vector<std::vector<double>> tags(cache.seg.label_positions.size(),
                                        std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (std::size_t s = 0; s < tags.size(); ++s) {
    const auto& lps = cache.seg.label_positions[s];
    for (int lp : lps) {
      const double* row = &p.emb.w[static_cast<std::size_t>(toks[static_cast<std::size_t>(lp)]) * d];
      for (int i = 0; i < d; ++i) tags[s][static_cast<std::size_t>(i)] += row[i];
    }
    for (int i = 0; i < d; ++i) tags[s][static_cast<std::size_t>(i)] /= static_cast<double>(lps.size());
  }
  for (int ppos = 0; ppos < T; ++ppos) {
    const double* row = &p.emb.w[static_cast<std::size_t>(toks[static_cast<std::size_t>(ppos)]) * d];
    double* xrow = &cache.X[static_cast<std::size_t>(ppos) * d];
    for (int i = 0; i < d; ++i) xrow[i] = row[i];
    int tag = cache.seg.tag_of_pos[static_cast<std::size_t>(ppos)];
    if (tag >= 0)
      for (int i = 0; i < d; ++i) xrow[i] += tags[static_cast<std::size_t>(tag)][static_cast<std::size_t>(i)];
  }

  cache.Q.resize(static_cast<std::size_t>(T) * d);
  cache.K.resize(static_cast<std::size_t>(T) * d);
  cache.V.resize(static_cast<std::size_t>(T) * d);
  matmul(cache.X.data(), p.wq.w.data(), cache.Q.data(), T, d, d);
  matmul(cache.X.data(), p.wk.w.data(), cache.K.data(), T, d, d);
  matmul(cache.X.data(), p.wv.w.data(), cache.V.data(), T, d, d);

  cache.A.resize(static_cast<std::size_t>(T) * T);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  matmul_b_t(cache.Q.data(), cache.K.data(), cache.A.data(), T, d, T);
  for (int i = 0; i < T; ++i) {
    double* row = &cache.A[static_cast<std::size_t>(i) * T];
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < T; ++j) {
      row[j] *= scale;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (int j = 0; j < T; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < T; ++j) row[j] /= sum;
  }

  cache.Z.resize(static_cast<std::size_t>(T) * d);
  matmul(cache.A.data(), cache.V.data(), cache.Z.data(), T, T, d);

  cache.P1.resize(static_cast<std::size_t>(T) * dff);
  matmul(cache.Z.data(), p.w1.w.data(), cache.P1.data(), T, d, dff);

  cache.c.assign(static_cast<std::size_t>(d), 0.0);
  std::vector<double> h(static_cast<std::size_t>(d));
  for (int pos = 0; pos < T; ++pos) {
    const double* prow = &cache.P1[static_cast<std::size_t>(pos) * dff];
    std::fill(h.begin(), h.end(), 0.0);
    for (int j = 0; j < dff; ++j) {
      double a = prow[j];
      if (a <= 0.0) continue;
      const double* w2row = &p.w2.w[static_cast<std::size_t>(j) * d];
      for (int i = 0; i < d; ++i) h[static_cast<std::size_t>(i)] += a * w2row[i];
    }
    for (int i = 0; i < d; ++i) cache.c[static_cast<std::size_t>(i)] += h[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < d; ++i) cache.c[static_cast<std::size_t>(i)] /= static_cast<double>(T);
}

// Backward through the encoder given d(loss)/dc; accumulates into grads.
void encode_backward(const ModelParams& p, const Vocab& v, const std::vector<int>& toks,
                     const EncoderCache& cache, const std::vector<double>& dc,
                     ModelParams& grads) {
  const int T = cache.T;
  const int d = p.d, dff = p.d_ff;

  // mean pool: dH = dc / T for every row
  std::vector<double> dZ(static_cast<std::size_t>(T) * d, 0.0);
  std::vector<double> dh(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) dh[static_cast<std::size_t>(i)] = dc[static_cast<std::size_t>(i)] / static_cast<double>(T);

  std::vector<double> da1(static_cast<std::size_t>(dff));
  for (int pos = 0; pos < T; ++pos) {
    const double* prow = &cache.P1[static_cast<std::size_t>(pos) * dff];
    const double* zrow = &cache.Z[static_cast<std::size_t>(pos) * d];
    // da1 = dh * W2^T, masked by relu'
    for (int j = 0; j < dff; ++j) {
      if (prow[j] <= 0.0) {
        da1[static_cast<std::size_t>(j)] = 0.0;
        continue;
      }
      const double* w2row = &p.w2.w[static_cast<std::size_t>(j) * d];
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += dh[static_cast<std::size_t>(i)] * w2row[i];
      da1[static_cast<std::size_t>(j)] = acc;
      // dW2 row j += relu(p1)_j * dh
      double a = prow[j];
      double* g2row = &grads.w2.w[static_cast<std::size_t>(j) * d];
      for (int i = 0; i < d; ++i) g2row[i] += a * dh[static_cast<std::size_t>(i)];
    }
    // dW1 += z^T da1 ; dZ = da1 * W1^T
    double* dzrow = &dZ[static_cast<std::size_t>(pos) * d];
    for (int i = 0; i < d; ++i) {
      const double zi = zrow[i];
      const double* w1row = &p.w1.w[static_cast<std::size_t>(i) * dff];
      double* g1row = &grads.w1.w[static_cast<std::size_t>(i) * dff];
      double acc = 0.0;
      for (int j = 0; j < dff; ++j) {
        const double dj = da1[static_cast<std::size_t>(j)];
        acc += dj * w1row[j];
        g1row[j] += zi * dj;
      }
      dzrow[i] = acc;
    }
  }

  // attention: Z = A V
  std::vector<double> dV(static_cast<std::size_t>(T) * d, 0.0);
  matmul_at_b_add(cache.A.data(), dZ.data(), dV.data(), T, T, d);
  std::vector<double> dA(static_cast<std::size_t>(T) * T);
  matmul_b_t(dZ.data(), cache.V.data(), dA.data(), T, d, T);

  // softmax rows
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> dS(static_cast<std::size_t>(T) * T);
  for (int i = 0; i < T; ++i) {
    const double* arow = &cache.A[static_cast<std::size_t>(i) * T];
    const double* darow = &dA[static_cast<std::size_t>(i) * T];
    double dot = 0.0;
    for (int j = 0; j < T; ++j) dot += arow[j] * darow[j];
    double* dsrow = &dS[static_cast<std::size_t>(i) * T];
    for (int j = 0; j < T; ++j) dsrow[j] = arow[j] * (darow[j] - dot) * scale;
  }

  // scores = Q K^T: dQ = dS K, dK = dS^T Q
  std::vector<double> dQ(static_cast<std::size_t>(T) * d);
  matmul(dS.data(), cache.K.data(), dQ.data(), T, T, d);
  std::vector<double> dK(static_cast<std::size_t>(T) * d, 0.0);
  matmul_at_b_add(dS.data(), cache.Q.data(), dK.data(), T, T, d);

  // projections
  matmul_at_b_add(cache.X.data(), dQ.data(), grads.wq.w.data(), T, d, d);
  matmul_at_b_add(cache.X.data(), dK.data(), grads.wk.w.data(), T, d, d);
  matmul_at_b_add(cache.X.data(), dV.data(), grads.wv.w.data(), T, d, d);

  std::vector<double> dX(static_cast<std::size_t>(T) * d);
  matmul_b_t(dQ.data(), p.wq.w.data(), dX.data(), T, d, d);
  std::vector<double> tmp(static_cast<std::size_t>(T) * d);
  matmul_b_t(dK.data(), p.wk.w.data(), tmp.data(), T, d, d);
  for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += tmp[i];
  matmul_b_t(dV.data(), p.wv.w.data(), tmp.data(), T, d, d);
  for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += tmp[i];

  // embeddings and label tags
  for (int pos = 0; pos < T; ++pos) {
    const double* dxrow = &dX[static_cast<std::size_t>(pos) * d];
    double* grow = &grads.emb.w[static_cast<std::size_t>(toks[static_cast<std::size_t>(pos)]) * d];
    for (int i = 0; i < d; ++i) grow[i] += dxrow[i];
    int tag = cache.seg.tag_of_pos[static_cast<std::size_t>(pos)];
    if (tag < 0) continue;
    const auto& lps = cache.seg.label_positions[static_cast<std::size_t>(tag)];
    const double inv = 1.0 / static_cast<double>(lps.size());
    for (int lp : lps) {
      double* lrow = &grads.emb.w[static_cast<std::size_t>(toks[static_cast<std::size_t>(lp)]) * d];
      for (int i = 0; i < d; ++i) lrow[i] += dxrow[i] * inv;
    }
  }
}

double log_sum_exp(const double* row, int n) {
  double mx = row[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(row[i] - mx);
  return mx + std::log(sum);
}

std::vector<int> label_token_ids(const Vocab& v) {
  std::vector<int> ids;
  ids.reserve(v.label_vocab.size());
  for (const auto& label : v.label_vocab) ids.push_back(v.label_token_id(label));
  return ids;
}

}  // namespace

double loss_and_grad(const ModelParams& params, const Vocab& vocab,
                     const std::vector<ModelInstance>& batch, ModelParams* grads) {
  if (batch.empty()) fail(ErrKind::Config, "loss_and_grad: empty batch");
  const int d = params.d;
  const int C = params.n_labels + 1;
  if (grads) {
    *grads = ModelParams();
    grads->d = params.d;
    grads->d_ff = params.d_ff;
    grads->vocab_size = params.vocab_size;
    grads->n_labels = params.n_labels;
    grads->emb.resize(params.vocab_size, d);
    grads->wq.resize(d, d);
    grads->wk.resize(d, d);
    grads->wv.resize(d, d);
    grads->w1.resize(d, params.d_ff);
    grads->w2.resize(params.d_ff, d);
    grads->head.resize(d, C);
  }

  const std::vector<int> lab_tok = label_token_ids(vocab);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total_loss = 0.0;
  EncoderCache cache;

  for (const auto& inst : batch) {
    if (inst.targets.empty()) fail(ErrKind::Data, "instance with empty target sequence");
    encode_forward(params, vocab, inst.tokens, cache);
    const int S = static_cast<int>(inst.targets.size());
    const double w = inv_batch / static_cast<double>(S);

    // teacher-forced decoder states
    std::vector<double> U(static_cast<std::size_t>(S) * d);
    for (int i = 0; i < d; ++i) U[static_cast<std::size_t>(i)] = cache.c[static_cast<std::size_t>(i)];
    for (int t = 1; t < S; ++t) {
      const int prev = inst.targets[static_cast<std::size_t>(t - 1)];
      if (prev < 0 || prev >= params.n_labels)
        fail(ErrKind::Data, "teacher-forced prefix contains a non-label id");
      const double* erow = &params.emb.w[static_cast<std::size_t>(lab_tok[static_cast<std::size_t>(prev)]) * d];
      const double* uprev = &U[static_cast<std::size_t>(t - 1) * d];
      double* ucur = &U[static_cast<std::size_t>(t) * d];
      for (int i = 0; i < d; ++i) ucur[i] = uprev[i] + erow[i];
    }

    std::vector<double> logits(static_cast<std::size_t>(S) * C);
    matmul(U.data(), params.head.w.data(), logits.data(), S, d, C);

    std::vector<double> dlogits;
    if (grads) dlogits.assign(static_cast<std::size_t>(S) * C, 0.0);
    for (int t = 0; t < S; ++t) {
      const double* lrow = &logits[static_cast<std::size_t>(t) * C];
      const int y = inst.targets[static_cast<std::size_t>(t)];
      if (y < 0 || y >= C) fail(ErrKind::Data, "target head id out of range");
      const double lse = log_sum_exp(lrow, C);
      total_loss += (lse - lrow[y]) * inv_batch / static_cast<double>(S);
      if (grads) {
        double* drow = &dlogits[static_cast<std::size_t>(t) * C];
        for (int cidx = 0; cidx < C; ++cidx) drow[cidx] = std::exp(lrow[cidx] - lse) * w;
        drow[y] -= w;
      }
    }

    if (!grads) continue;

    // head and decoder states
    matmul_at_b_add(U.data(), dlogits.data(), grads->head.w.data(), S, d, C);
    std::vector<double> dU(static_cast<std::size_t>(S) * d);
    matmul_b_t(dlogits.data(), params.head.w.data(), dU.data(), S, C, d);

    // u_t = c + sum_{j<t} emb[label_j]: suffix-sum the dU rows
    std::vector<double> run(static_cast<std::size_t>(d), 0.0);
    for (int t = S - 1; t >= 0; --t) {
      const double* durow = &dU[static_cast<std::size_t>(t) * d];
      for (int i = 0; i < d; ++i) run[static_cast<std::size_t>(i)] += durow[i];
      if (t >= 1) {
        const int prev = inst.targets[static_cast<std::size_t>(t - 1)];
        // run holds sum_{s>=t} dU_s, exactly the flow into label t-1's embedding
        double* erow = &grads->emb.w[static_cast<std::size_t>(lab_tok[static_cast<std::size_t>(prev)]) * d];
        for (int i = 0; i < d; ++i) erow[i] += run[static_cast<std::size_t>(i)];
      }
    }
    encode_backward(params, vocab, inst.tokens, cache, run, *grads);
  }
  return total_loss;
}

Rollout forward_rollout(const ModelParams& params, const Vocab& vocab,
                        const std::vector<int>& tokens, int max_steps) {
  Rollout out;
  if (max_steps <= 0) return out;
  const int d = params.d;
  const int C = params.n_labels + 1;
  EncoderCache cache;
  encode_forward(params, vocab, tokens, cache);
  const std::vector<int> lab_tok = label_token_ids(vocab);

  std::vector<double> u = cache.c;
  for (int step = 0; step < max_steps; ++step) {
    std::vector<double> logits(static_cast<std::size_t>(C), 0.0);
    for (int i = 0; i < d; ++i) {
      const double ui = u[static_cast<std::size_t>(i)];
      if (ui == 0.0) continue;
      const double* hrow = &params.head.w[static_cast<std::size_t>(i) * C];
      for (int cidx = 0; cidx < C; ++cidx) logits[static_cast<std::size_t>(cidx)] += ui * hrow[cidx];
    }
    int best = 0;
    for (int cidx = 1; cidx < C; ++cidx)
      if (logits[static_cast<std::size_t>(cidx)] > logits[static_cast<std::size_t>(best)]) best = cidx;
    out.step_logits.push_back(logits);
    if (best == params.n_labels) break;  // EOS
    out.emitted.push_back(best);
    const double* erow = &params.emb.w[static_cast<std::size_t>(lab_tok[static_cast<std::size_t>(best)]) * d];
    for (int i = 0; i < d; ++i) u[static_cast<std::size_t>(i)] += erow[i];
  }
  return out;
}

std::vector<int> generate_greedy(const ModelParams& params, const Vocab& vocab,
                                 const std::vector<int>& tokens, int max_steps) {
  return forward_rollout(params, vocab, tokens, max_steps).emitted;
}

std::vector<std::string> decode_labels(const std::vector<int>& head_ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int hid : head_ids) {
    if (hid < 0 || hid >= static_cast<int>(vocab.label_vocab.size()))
      fail(ErrKind::Internal, "decode_labels: head id out of range");
    out.push_back(vocab.label_vocab[static_cast<std::size_t>(hid)]);
  }
  return out;
}

namespace {

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;

  void init(const ModelParams& p) {
    m.clear();
    v.clear();
    for (const Tensor* t : p.tensors()) {
      m.emplace_back(t->w.size(), 0.0);
      v.emplace_back(t->w.size(), 0.0);
    }
  }
};

void check_finite(double loss, const ModelParams& p, long step) {
  if (!std::isfinite(loss))
    fail(ErrKind::Numeric, "non-finite loss at step " + std::to_string(step));
  for (const Tensor* t : p.tensors())
    for (double w : t->w)
      if (!std::isfinite(w))
        fail(ErrKind::Numeric, "non-finite parameter after step " + std::to_string(step));
}

void adam_step(ModelParams& p, const ModelParams& g, AdamState& st, const TrainConfig& cfg,
               double lr) {
  st.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  auto pts = p.tensors();
  auto gts = g.tensors();
  for (std::size_t ti = 0; ti < pts.size(); ++ti) {
    auto& m = st.m[ti];
    auto& v = st.v[ti];
    auto& w = pts[ti]->w;
    const auto& gw = gts[ti]->w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * gw[i];
      v[i] = b2 * v[i] + (1.0 - b2) * gw[i] * gw[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
  }
}

void add_scaled(ModelParams& dst, const ModelParams& src, double s) {
  auto dts = dst.tensors();
  auto sts = src.tensors();
  for (std::size_t ti = 0; ti < dts.size(); ++ti)
    for (std::size_t i = 0; i < dts[ti]->w.size(); ++i) dts[ti]->w[i] += s * sts[ti]->w[i];
}

void scale_params(ModelParams& p, double s) {
  for (Tensor* t : p.tensors())
    for (double& w : t->w) w *= s;
}

// Shared optimization loop for train() and fine_tune().
void run_optimizer(ModelParams& params, const Vocab& vocab,
                   const std::vector<ModelInstance>& instances,
                   const std::vector<ModelInstance>& aux, double beta, const TrainConfig& cfg,
                   const RngKey& key, const std::vector<ModelInstance>& dev, TrainStats* stats) {
  if (instances.empty()) fail(ErrKind::Data, "training requires at least one instance");
  if (cfg.epochs < 0 || cfg.batch_size <= 0) fail(ErrKind::Config, "bad epochs/batch_size");

  AdamState st;
  st.init(params);
  Rng order_rng = Rng(key).split("order");

  const std::size_t n = instances.size();
  const long batches_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = batches_per_epoch * cfg.epochs;

  std::vector<std::size_t> order(n), aux_order;
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (!aux.empty()) {
    aux_order.resize(aux.size());
    for (std::size_t i = 0; i < aux.size(); ++i) aux_order[i] = i;
  }

  ModelParams best;
  double best_dev = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  ModelParams grads, aux_grads;
  std::size_t aux_cursor = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    if (!aux.empty()) {
      if (aux.size() == n) aux_order = order;  // equal budgets walk in lockstep
      else order_rng.shuffle(aux_order);
      aux_cursor = 0;
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<ModelInstance> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(instances[order[i]]);

      double loss;
      if (aux.empty()) {
        loss = loss_and_grad(params, vocab, batch, &grads);
      } else {
        std::vector<ModelInstance> aux_batch;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          if (aux_cursor == aux_order.size()) {
            order_rng.shuffle(aux_order);
            aux_cursor = 0;
          }
          aux_batch.push_back(aux[aux_order[aux_cursor++]]);
        }
        const double l_primary = loss_and_grad(params, vocab, batch, &grads);
        const double l_aux = loss_and_grad(params, vocab, aux_batch, &aux_grads);
        loss = beta * l_aux + (1.0 - beta) * l_primary;
        scale_params(grads, 1.0 - beta);
        add_scaled(grads, aux_grads, beta);
      }

      double lr = cfg.lr;
      if (cfg.linear_decay && total_steps > 0)
        lr = cfg.lr * (1.0 - static_cast<double>(st.step) / static_cast<double>(total_steps));
      adam_step(params, grads, st, cfg, lr);
      check_finite(loss, params, st.step);
      epoch_loss += loss * static_cast<double>(stop - start);
    }
    epoch_loss /= static_cast<double>(n);
    if (stats) stats->epoch_mean_loss.push_back(epoch_loss);

    if (cfg.select_on_dev && !dev.empty()) {
      const double dev_loss = loss_and_grad(params, vocab, dev, nullptr);
      if (dev_loss < best_dev) {
        best_dev = dev_loss;
        best = params;
        best_epoch = epoch;
      }
    }
  }

  if (cfg.select_on_dev && !dev.empty() && best_epoch >= 0) {
    params = best;
    if (stats) stats->selected_epoch = best_epoch;
  }
}

}  // namespace

ModelParams train(const std::vector<ModelInstance>& instances, const Vocab& vocab,
                  const TrainConfig& config, const RngKey& key,
                  const std::vector<ModelInstance>& dev, TrainStats* stats) {
  ModelParams params = init_params(vocab.size(), static_cast<int>(vocab.label_vocab.size()),
                                   config.d, config.d_ff, key);
  run_optimizer(params, vocab, instances, {}, 0.0, config, key, dev, stats);
  return params;
}

ModelParams train_from(ModelParams start, const std::vector<ModelInstance>& instances,
                       const Vocab& vocab, const TrainConfig& config, const RngKey& key,
                       const std::vector<ModelInstance>& dev, TrainStats* stats) {
  run_optimizer(start, vocab, instances, {}, 0.0, config, key, dev, stats);
  return start;
}

void pretrain_embeddings(ModelParams& params, const Vocab& vocab,
                         const std::vector<std::vector<int>>& texts,
                         const TrainConfig& cfg, const RngKey& key) {
  if (cfg.pretrain_epochs <= 0) return;
  if (cfg.pretrain_lr <= 0.0 || cfg.pretrain_negatives < 0)
    fail(ErrKind::Config, "bad pretraining configuration");
  (void)vocab;

  std::vector<int> candidates;
  {
    std::set<int> seen;
    for (const auto& seq : texts)
      for (int id : seq) {
        if (id < 0 || id >= params.vocab_size)
          fail(ErrKind::Data, "pretraining token id out of range");
        seen.insert(id);
      }
    candidates.assign(seen.begin(), seen.end());
  }
  if (candidates.size() < 2) return;

  Rng rng = Rng(key).split("pretrain");
  std::vector<std::size_t> order(texts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const int dd = params.d;
  auto row = [&](int id) { return params.emb.w.data() + static_cast<std::size_t>(id) * dd; };
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  std::vector<double> center_grad(static_cast<std::size_t>(dd));

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t oi : order) {
      const std::vector<int>& toks = texts[oi];
      for (std::size_t i = 0; i < toks.size(); ++i) {
        for (std::size_t j = 0; j < toks.size(); ++j) {
          if (i == j) continue;
          double* c = row(toks[i]);
          std::fill(center_grad.begin(), center_grad.end(), 0.0);

          double* pos = row(toks[j]);
          double dot = 0.0;
          for (int k = 0; k < dd; ++k) dot += c[k] * pos[k];
          double g = sigmoid(dot) - 1.0;
          for (int k = 0; k < dd; ++k) {
            center_grad[static_cast<std::size_t>(k)] += g * pos[k];
            pos[k] -= cfg.pretrain_lr * g * c[k];
          }

          for (int n = 0; n < cfg.pretrain_negatives; ++n) {
            int neg = candidates[rng.uniform_int(candidates.size())];
            if (neg == toks[i] || neg == toks[j]) continue;
            double* nv = row(neg);
            dot = 0.0;
            for (int k = 0; k < dd; ++k) dot += c[k] * nv[k];
            g = sigmoid(dot);
            for (int k = 0; k < dd; ++k) {
              center_grad[static_cast<std::size_t>(k)] += g * nv[k];
              nv[k] -= cfg.pretrain_lr * g * c[k];
            }
          }

          for (int k = 0; k < dd; ++k) c[k] -= cfg.pretrain_lr * center_grad[static_cast<std::size_t>(k)];
        }
      }
    }
  }

  for (double w : params.emb.w)
    if (!std::isfinite(w)) fail(ErrKind::Numeric, "embedding pretraining diverged");
}

void fine_tune(ModelParams& params, const Vocab& vocab, const std::vector<ModelInstance>& instances,
               const std::vector<ModelInstance>& aux, double beta, const TrainConfig& config,
               const RngKey& key, TrainStats* stats) {
  if (beta < 0.0 || beta > 1.0) fail(ErrKind::Config, "beta must lie in [0, 1]");
  run_optimizer(params, vocab, instances, aux, beta, config, key, {}, stats);
}

// ---- serialization ----

namespace {

constexpr char kMagic[5] = {'I', 'C', 'X', 'M', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t& off) {
  if (off + 4 > in.size()) fail(ErrKind::Data, "model file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)])) << (8 * i);
  off += 4;
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(const std::string& in, std::size_t& off) {
  std::uint32_t bits = get_u32(in, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

std::string serialize_params(const ModelParams& p) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(p.d));
  put_u32(out, static_cast<std::uint32_t>(p.d_ff));
  put_u32(out, static_cast<std::uint32_t>(p.vocab_size));
  put_u32(out, static_cast<std::uint32_t>(p.n_labels));
  for (const Tensor* t : p.tensors())
    for (double w : t->w) put_f32(out, static_cast<float>(w));
  return out;
}

ModelParams deserialize_params(const std::string& in) {
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    fail(ErrKind::Data, "bad model file magic");
  std::size_t off = sizeof(kMagic);
  const int d = static_cast<int>(get_u32(in, off));
  const int dff = static_cast<int>(get_u32(in, off));
  const int vs = static_cast<int>(get_u32(in, off));
  const int nl = static_cast<int>(get_u32(in, off));
  if (d <= 0 || dff <= 0 || vs <= 0 || nl <= 0) fail(ErrKind::Data, "bad model file shapes");
  ModelParams p;
  p.d = d;
  p.d_ff = dff;
  p.vocab_size = vs;
  p.n_labels = nl;
  p.emb.resize(vs, d);
  p.wq.resize(d, d);
  p.wk.resize(d, d);
  p.wv.resize(d, d);
  p.w1.resize(d, dff);
  p.w2.resize(dff, d);
  p.head.resize(d, nl + 1);
  for (Tensor* t : p.tensors())
    for (double& w : t->w) w = static_cast<double>(get_f32(in, off));
  if (off != in.size()) fail(ErrKind::Data, "model file has trailing bytes");
  return p;
}

}  // namespace

void save_model(const Model& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  write_text_file(path("params.bin"), serialize_params(model.params));
  write_text_file(path("vocab.json"), model.vocab.to_json());
  json cfg;
  cfg["schema_version"] = 1;
  cfg["template"] = json::parse(template_to_json_text(model.tmpl));
  cfg["meta"] = model.meta_json.empty() ? json::object() : json::parse(model.meta_json);
  write_text_file(path("config.json"), cfg.dump(2) + "\n");
}

Model load_model(const std::string& dir) {
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  Model m;
  m.params = deserialize_params(read_text_file(path("params.bin")));
  m.vocab = Vocab::from_json(read_text_file(path("vocab.json")));
  json cfg;
  try {
    cfg = json::parse(read_text_file(path("config.json")));
  } catch (const json::exception& e) {
    fail(ErrKind::Data, std::string("invalid model config.json: ") + e.what());
  }
  m.tmpl = template_from_json_text(cfg.at("template").dump());
  m.meta_json = cfg.contains("meta") ? cfg["meta"].dump() : "{}";
  if (m.params.vocab_size != m.vocab.size())
    fail(ErrKind::Data, "model params and vocab disagree on vocabulary size");
  if (m.params.n_labels != static_cast<int>(m.vocab.label_vocab.size()))
    fail(ErrKind::Data, "model params and vocab disagree on label count");
  return m;
}

std::vector<unsigned char> params_bytes(const ModelParams& params) {
  std::string s = serialize_params(params);
  return {s.begin(), s.end()};
}

}  // namespace icxlt
