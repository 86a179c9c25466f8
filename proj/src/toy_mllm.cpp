#include "vgkit/toy_mllm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "vgkit/errors.hpp"

namespace vgkit {

namespace {

constexpr double kNormEps = 1e-6;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix draw(SplitMix64& rng, int rows, int cols, double scale) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.next_symmetric() * scale;
  return m;
}

void rms_normalize(std::span<const double> x, std::span<double> out) {
  double ss = 0;
  for (const double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

// out = x * w, x a row vector.
void row_times(std::span<const double> x, const Matrix& w, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int r = 0; r < w.rows; ++r) {
    const double xr = x[static_cast<std::size_t>(r)];
    if (xr == 0.0) continue;
    const auto wr = w.row(r);
    for (int c = 0; c < w.cols; ++c) out[static_cast<std::size_t>(c)] += xr * wr[static_cast<std::size_t>(c)];
  }
}

Matrix project(const Matrix& x, const Matrix& w) {
  Matrix out(x.rows, w.cols);
  for (int t = 0; t < x.rows; ++t) row_times(x.row(t), w, out.row(t));
  return out;
}

Matrix normalized_rows(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (int t = 0; t < x.rows; ++t) rms_normalize(x.row(t), out.row(t));
  return out;
}

}  // namespace

std::uint64_t SplitMix64::next_below(std::uint64_t bound) {
  if (bound == 0) throw ConfigError("next_below needs a positive bound");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = next();
  } while (v >= limit);
  return v % bound;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  SplitMix64 mix(base ^ fnv1a(tag));
  return mix.next();
}

void ToyConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || grid_n < 1 || vocab_size < 1 || max_text_len < 1) {
    throw ConfigError("toy model counts must all be >= 1");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
}

ToyModelState init_model(const ToyConfig& cfg) {
  cfg.validate();
  SplitMix64 rng(cfg.seed);
  const int d = cfg.model_dim;
  const int f = cfg.ffn_dim();
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_f = 1.0 / std::sqrt(static_cast<double>(f));

  ToyModelState m;
  m.config = cfg;
  m.token_embedding = draw(rng, cfg.vocab_size, d, 1.0);
  m.position_embedding = draw(rng, cfg.max_positions(), d, 1.0);
  m.layers.reserve(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    LayerWeights w;
    w.wq = draw(rng, d, d, s_d);
    w.wk = draw(rng, d, d, s_d);
    w.wv = draw(rng, d, d, s_d);
    w.wo = draw(rng, d, d, s_d);
    w.w1 = draw(rng, d, f, s_d);
    w.w2 = draw(rng, f, d, s_f);
    m.layers.push_back(std::move(w));
  }
  m.unembedding = draw(rng, d, cfg.vocab_size, s_d);
  return m;
}

ForwardTrace forward(const ToyModelState& model, const Matrix& visual_features,
                     std::span<const int> text_tokens, const RefinePlan* knockout,
                     std::optional<std::size_t> question_len, bool capture_full) {
  const ToyConfig& cfg = model.config;
  const int d = cfg.model_dim;
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const int nv = cfg.visual_tokens();

  if (text_tokens.empty()) throw ShapeError("forward needs at least one text token");
  if (static_cast<int>(text_tokens.size()) > cfg.max_text_len) {
    throw ShapeError("text of " + std::to_string(text_tokens.size()) + " tokens exceeds max_text_len " +
                     std::to_string(cfg.max_text_len));
  }
  if (visual_features.rows != nv || visual_features.cols != d) {
    throw ShapeError("visual features must be " + std::to_string(nv) + " x " + std::to_string(d));
  }
  const TokenLayout layout = TokenLayout::visual_then_text(static_cast<std::size_t>(nv), text_tokens.size(),
                                                           question_len);
  if (knockout) {
    if (knockout->mask.n() != cfg.grid_n) {
      throw ShapeError("knockout mask grid " + std::to_string(knockout->mask.n()) + " vs model grid " +
                       std::to_string(cfg.grid_n));
    }
    for (const int l : knockout->layers) {
      if (l < 0 || l >= cfg.layers) {
        throw RangeError("knockout layer " + std::to_string(l) + " outside [0, " + std::to_string(cfg.layers) + ")");
      }
    }
  }

  const int seq = static_cast<int>(layout.total());
  Matrix x(seq, d);
  for (int t = 0; t < seq; ++t) {
    const auto pos = model.position_embedding.row(t);
    std::span<const double> base;
    if (t < nv) {
      base = visual_features.row(t);
    } else {
      const int id = text_tokens[static_cast<std::size_t>(t - nv)];
      if (id < 0 || id >= cfg.vocab_size) throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
      base = model.token_embedding.row(id);
    }
    auto out = x.row(t);
    for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(c)] = base[static_cast<std::size_t>(c)] + pos[static_cast<std::size_t>(c)];
  }

  ForwardTrace trace;
  trace.layout = layout;
  trace.attention = AttentionStack(static_cast<std::uint32_t>(cfg.layers), static_cast<std::uint32_t>(heads),
                                   static_cast<std::uint32_t>(cfg.grid_n));
  trace.last_rows.resize(static_cast<std::size_t>(cfg.layers) * heads);
  if (capture_full) {
    trace.full_attention.assign(static_cast<std::size_t>(cfg.layers) * heads, Matrix(seq, seq));
  }
  const int last = seq - 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> weights(static_cast<std::size_t>(seq));
  std::vector<double> hidden(static_cast<std::size_t>(cfg.ffn_dim()));
  std::vector<double> delta(static_cast<std::size_t>(d));

  for (int l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = model.layers[static_cast<std::size_t>(l)];
    const Matrix h = normalized_rows(x);
    const Matrix q = project(h, w.wq);
    const Matrix k = project(h, w.wk);
    const Matrix v = project(h, w.wv);
    const bool masked_layer = knockout && knockout->applies_to_layer(l);

    Matrix mixed(seq, d);
    for (int head = 0; head < heads; ++head) {
      const int c0 = head * dh;
      for (int i = 0; i < seq; ++i) {
        const bool masked_row = masked_layer && knockout->applies_to_query(static_cast<std::size_t>(i), layout);
        const auto span_w = std::span<double>(weights).first(static_cast<std::size_t>(i) + 1);
        for (int j = 0; j <= i; ++j) {
          double dot = 0;
          for (int c = c0; c < c0 + dh; ++c) dot += q(i, c) * k(j, c);
          span_w[static_cast<std::size_t>(j)] = dot * scale;
        }
        if (masked_row && knockout->mask_mode == MaskMode::pre_softmax) {
          // Only keys up to i exist for this row; mask the visual ones among them.
          for (int j = 0; j <= i && j < nv; ++j) {
            if (!knockout->mask.keeps(static_cast<std::size_t>(j))) {
              span_w[static_cast<std::size_t>(j)] = -std::numeric_limits<double>::infinity();
            }
          }
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (const double s : span_w) mx = std::max(mx, s);
        double z = 0;
        for (double& s : span_w) {
          s = std::exp(s - mx);
          z += s;
        }
        for (double& s : span_w) s /= z;
        if (masked_row && knockout->mask_mode == MaskMode::post_softmax) {
          for (int j = 0; j <= i && j < nv; ++j) {
            if (!knockout->mask.keeps(static_cast<std::size_t>(j))) span_w[static_cast<std::size_t>(j)] = 0.0;
          }
        }
        for (int j = 0; j <= i; ++j) {
          const double a = span_w[static_cast<std::size_t>(j)];
          if (a == 0.0) continue;
          for (int c = c0; c < c0 + dh; ++c) mixed(i, c) += a * v(j, c);
        }
        if (capture_full) {
          Matrix& full = trace.full_attention[static_cast<std::size_t>(l) * heads + head];
          for (int j = 0; j <= i; ++j) full(i, j) = span_w[static_cast<std::size_t>(j)];
        }
        if (i == last) {
          auto& row = trace.last_rows[static_cast<std::size_t>(l) * heads + head];
          row.assign(span_w.begin(), span_w.end());
          auto dump = trace.attention.mutable_head(static_cast<std::size_t>(l), static_cast<std::size_t>(head));
          for (int p = 0; p < nv; ++p) dump[static_cast<std::size_t>(p)] = static_cast<float>(span_w[static_cast<std::size_t>(p)]);
        }
      }
    }

    for (int t = 0; t < seq; ++t) {
      row_times(mixed.row(t), w.wo, delta);
      auto xt = x.row(t);
      for (int c = 0; c < d; ++c) xt[static_cast<std::size_t>(c)] += delta[static_cast<std::size_t>(c)];
    }
    const Matrix h2 = normalized_rows(x);
    for (int t = 0; t < seq; ++t) {
      row_times(h2.row(t), w.w1, hidden);
      for (double& a : hidden) a = std::max(a, 0.0);
      row_times(hidden, w.w2, delta);
      auto xt = x.row(t);
      for (int c = 0; c < d; ++c) xt[static_cast<std::size_t>(c)] += delta[static_cast<std::size_t>(c)];
    }
    double ss = 0;
    for (const double val : x.row(last)) ss += val * val;
    trace.hidden_norms.push_back(std::sqrt(ss));
  }

  std::vector<double> final_h(static_cast<std::size_t>(d));
  rms_normalize(x.row(last), final_h);
  trace.logits.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
  row_times(final_h, model.unembedding, trace.logits);
  return trace;
}

std::vector<int> tokenize(std::string_view text, int vocab_size) {
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const std::uint64_t h = fnv1a(word);
    ids.push_back(vocab_size > 2 ? 2 + static_cast<int>(h % static_cast<std::uint64_t>(vocab_size - 2))
                                 : static_cast<int>(h % static_cast<std::uint64_t>(vocab_size)));
    word.clear();
  };
  for (const char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

std::vector<int> reference_prompt_tokens(int vocab_size) { return tokenize(kReferencePrompt, vocab_size); }

Matrix make_visual_features(const ToyConfig& cfg, std::uint64_t seed, const PatchMask* region) {
  cfg.validate();
  SplitMix64 rng(seed);
  Matrix f = draw(rng, cfg.visual_tokens(), cfg.model_dim, 1.0);
  if (region) {
    if (region->n() != cfg.grid_n) throw ShapeError("region grid does not match the model grid");
    if (cfg.model_dim < 2) throw ConfigError("region-coded features need model_dim >= 2");
    for (int p = 0; p < f.rows; ++p) {
      f(p, 0) = 0.0;
      f(p, 1) = region->cells()[static_cast<std::size_t>(p)] ? 1.0 : -1.0;
    }
  }
  return f;
}

void plant_grounding_layer(ToyModelState& model, int layer, double gain) {
  const ToyConfig& cfg = model.config;
  if (layer < 0 || layer >= cfg.layers) throw RangeError("plant layer outside the model");
  if (cfg.model_dim < 2) throw ConfigError("planting needs model_dim >= 2");
  for (int v = 0; v < cfg.vocab_size; ++v) {
    model.token_embedding(v, 0) = 3.0;
    model.token_embedding(v, 1) = 0.0;
  }
  for (int t = 0; t < model.position_embedding.rows; ++t) {
    model.position_embedding(t, 0) = 0.0;
    model.position_embedding(t, 1) = 0.0;
  }
  for (int l = 0; l < layer; ++l) {
    auto& w = model.layers[static_cast<std::size_t>(l)];
    std::fill(w.wo.data.begin(), w.wo.data.end(), 0.0);
    std::fill(w.w2.data.begin(), w.w2.data.end(), 0.0);
  }
  auto& w = model.layers[static_cast<std::size_t>(layer)];
  std::fill(w.wq.data.begin(), w.wq.data.end(), 0.0);
  std::fill(w.wk.data.begin(), w.wk.data.end(), 0.0);
  for (int head = 0; head < cfg.heads; ++head) {
    const int c = head * cfg.head_dim();
    w.wq(0, c) = gain;
    w.wk(1, c) = 1.0;
  }
}

ExportedDumps export_dumps(const ToyModelState& model, const Matrix& visual_features,
                           std::span<const int> question_tokens, std::span<const int> reference_tokens) {
  if (question_tokens.empty()) throw ShapeError("question has no tokens");
  if (reference_tokens.empty()) throw ShapeError("reference prompt has no tokens");
  ExportedDumps out{forward(model, visual_features, question_tokens).attention,
                    forward(model, visual_features, reference_tokens).attention};
  out.question.set_source_kind(SourceKind::question);
  out.reference.set_source_kind(SourceKind::reference);
  return out;
}

void write_sample_files(const std::filesystem::path& dir, const SampleMeta& meta, const ExportedDumps& dumps) {
  check_pairing(meta, dumps.question);
  check_pairing(meta, dumps.reference);
  save_dump(dumps.question, question_dump_path(dir, meta.sample_id));
  save_dump(dumps.reference, reference_dump_path(dir, meta.sample_id));
  save_meta(meta, meta_path(dir, meta.sample_id));
}

}  // namespace vgkit
