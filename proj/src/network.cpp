// SPDX-License-Identifier: Apache-2.0
#include "bnrank/network.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "bnrank/errors.hpp"

namespace bnrank {

bool MlpModel::has_bn() const noexcept {
  return std::any_of(use_bn.begin(), use_bn.end(), [](bool b) { return b; });
}

bool MlpModel::has_skip(int layer) const noexcept {
  // layer is 1-based over hidden layers
  return !is_no_skip(gamma) && layer_dims[static_cast<std::size_t>(layer)] == layer_dims[static_cast<std::size_t>(layer - 1)];
}

void MlpModel::validate() const {
  if (layer_dims.size() < 2) throw InvalidInput("layer_dims needs an input and an output size");
  if (weights.size() != layer_dims.size() - 1) throw InvalidInput("one weight matrix per layer expected");
  if (use_bn.size() != static_cast<std::size_t>(hidden_layers())) throw InvalidInput("one use_bn flag per hidden layer");
  if (!(gamma >= 0.0)) throw InvalidInput("gamma must be non-negative or infinite");
  if (!(bn_epsilon >= 0.0)) throw InvalidInput("bn_epsilon must be non-negative");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (layer_dims[l] < 1 || layer_dims[l + 1] < 1) throw InvalidInput("layer sizes must be positive");
    if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l])
      throw InvalidInput("weight " + std::to_string(l) + " does not match layer_dims");
    if (!weights[l].allFinite()) throw InvalidInput("weight " + std::to_string(l) + " has non-finite entries");
  }
}

MlpModel make_mlp(Index input_dim, Index width, int depth, Index output_dim, Activation act, bool use_bn,
                  const MlpInit& init, RngHandle& rng, double gamma) {
  if (depth < 0) throw InvalidInput("depth must be non-negative");
  MlpModel m;
  m.layer_dims.push_back(input_dim);
  for (int l = 0; l < depth; ++l) m.layer_dims.push_back(width);
  m.layer_dims.push_back(output_dim);
  m.activation = act;
  m.use_bn.assign(static_cast<std::size_t>(depth), use_bn);
  m.gamma = gamma;
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    const Index fan_in = m.layer_dims[l];
    InitSpec spec{init.kind, 1.0};
    if (init.kind != InitKind::uniform_asymmetric) spec.scale = init.gain / std::sqrt(static_cast<double>(fan_in));
    m.weights.push_back(sample_weight(spec, m.layer_dims[l + 1], fan_in, rng));
  }
  m.validate();
  return m;
}

const Matrix& ForwardPass::hidden(int l) const {
  if (l == 0) return layers.at(0).input;
  return layers.at(static_cast<std::size_t>(l - 1)).output;
}

ForwardPass forward(const MlpModel& model, const Matrix& x, int stop_layer) {
  const int L = model.hidden_layers();
  if (x.rows() != model.layer_dims.front()) throw InvalidInput("input rows do not match d_0");
  if (!x.allFinite()) throw InvalidInput("non-finite input");
  const int top = stop_layer < 0 ? L : std::min(stop_layer, L);
  const double n = static_cast<double>(x.cols());

  ForwardPass fp;
  fp.layers.resize(static_cast<std::size_t>(top));
  const Matrix* h = &x;
  for (int l = 1; l <= top; ++l) {
    LayerCache& c = fp.layers[static_cast<std::size_t>(l - 1)];
    const Matrix& w = model.weights[static_cast<std::size_t>(l - 1)];
    c.input = *h;
    if (model.has_skip(l)) {
      c.pre = c.input;
      if (model.gamma != 0.0) c.pre.noalias() += model.gamma * (w * c.input);
    } else {
      c.pre.noalias() = w * c.input;
    }
    c.act = model.activation == Activation::relu ? Matrix(c.pre.cwiseMax(0.0)) : c.pre;
    if (model.use_bn[static_cast<std::size_t>(l - 1)]) {
      c.centered = c.act;
      if (model.centering) c.centered.colwise() -= c.centered.rowwise().mean();
      c.scale.resize(c.centered.rows());
      for (Index i = 0; i < c.centered.rows(); ++i) {
        const double var = c.centered.row(i).squaredNorm() / n + model.bn_epsilon;
        if (!(var > 0.0)) throw ZeroRowError("BN row vanished in layer " + std::to_string(l), static_cast<long>(i));
        c.scale[i] = std::sqrt(var);
      }
      c.output = c.scale.cwiseInverse().asDiagonal() * c.centered;
    } else {
      c.output = c.act;
    }
    h = &c.output;
  }
  if (top == L) fp.logits.noalias() = model.weights.back() * (*h);
  return fp;
}

namespace {

// Propagates d/dH_top down to the input, filling grads for layers 1..top
// (or only `top` when only_top).
void backprop_hidden(const MlpModel& model, const ForwardPass& fp, Matrix grad, int top, bool only_top,
                     Gradients& out) {
  const double n = static_cast<double>(fp.layers.front().input.cols());
  for (int l = top; l >= 1; --l) {
    const LayerCache& c = fp.layers[static_cast<std::size_t>(l - 1)];
    const Matrix& w = model.weights[static_cast<std::size_t>(l - 1)];
    if (model.use_bn[static_cast<std::size_t>(l - 1)]) {
      // y = x / s with s^2 = |x|^2 / N + eps  =>  dx = (dy - y <dy, y> / N) / s
      const Vector dot = grad.cwiseProduct(c.output).rowwise().sum() / n;
      Matrix dx = grad - dot.asDiagonal() * c.output;
      dx = c.scale.cwiseInverse().asDiagonal() * dx;
      if (model.centering) dx.colwise() -= dx.rowwise().mean();
      grad = std::move(dx);
    }
    if (model.activation == Activation::relu) grad = grad.cwiseProduct((c.pre.array() > 0.0).cast<double>().matrix());
    const bool skip = model.has_skip(l);
    const double coef = skip ? model.gamma : 1.0;
    out.weights[static_cast<std::size_t>(l - 1)].noalias() = coef * grad * c.input.transpose();
    if (only_top || l == 1) break;
    Matrix next = coef * (w.transpose() * grad);
    if (skip) next += grad;
    grad = std::move(next);
  }
}

Gradients zero_grads(const MlpModel& model) {
  Gradients g;
  for (const auto& w : model.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  return g;
}

Matrix softmax_cols(const Matrix& logits) {
  Matrix p = logits;
  for (Index j = 0; j < p.cols(); ++j) {
    p.col(j).array() -= p.col(j).maxCoeff();
    p.col(j) = p.col(j).array().exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

void check_labels(const std::vector<int>& labels, Index n, Index classes) {
  if (static_cast<Index>(labels.size()) != n) throw InvalidInput("one label per sample expected");
  for (int y : labels)
    if (y < 0 || y >= classes) throw InvalidInput("label out of range: " + std::to_string(y));
}

}  // namespace

double softmax_ce_loss(const Matrix& logits, const std::vector<int>& labels) {
  check_labels(labels, logits.cols(), logits.rows());
  double total = 0.0;
  for (Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
    total += lse - logits(labels[static_cast<std::size_t>(j)], j);
  }
  const double loss = total / static_cast<double>(logits.cols());
  if (!std::isfinite(loss)) throw NumericalOverflow("non-finite loss");
  return loss;
}

LossResult backward_loss(const MlpModel& model, const Matrix& x, const std::vector<int>& labels) {
  const ForwardPass fp = forward(model, x);
  LossResult res;
  res.loss = softmax_ce_loss(fp.logits, labels);
  res.grads = zero_grads(model);
  Matrix dlogits = softmax_cols(fp.logits);
  for (Index j = 0; j < dlogits.cols(); ++j) dlogits(labels[static_cast<std::size_t>(j)], j) -= 1.0;
  dlogits /= static_cast<double>(x.cols());
  const int L = model.hidden_layers();
  const Matrix& h_last = L == 0 ? x : fp.hidden(L);
  res.grads.weights.back().noalias() = dlogits * h_last.transpose();
  if (L > 0) backprop_hidden(model, fp, model.weights.back().transpose() * dlogits, L, false, res.grads);
  return res;
}

Matrix rank_objective_grad_h(const Matrix& h, double* r_out) {
  const Matrix m = second_moment(h);
  const double t = m.trace();
  const double f = m.squaredNorm();
  if (!(f > 0.0)) throw DegenerateInput("rank objective undefined for H = 0");
  if (r_out) *r_out = t * t / f;
  const double n = static_cast<double>(h.cols());
  Matrix g = h;
  g.noalias() -= (t / f) * (m * h);
  return (4.0 * t / (n * f)) * g;
}

RankObjectiveResult backward_rank_objective(const MlpModel& model, const Matrix& x, int layer, bool only_top) {
  const int L = model.hidden_layers();
  if (L < 1) throw InvalidInput("rank objective needs at least one hidden layer");
  const int top = layer < 0 ? L : layer;
  if (top < 1 || top > L) throw InvalidInput("rank objective layer out of range");
  const ForwardPass fp = forward(model, x, top);
  RankObjectiveResult res;
  res.grads = zero_grads(model);
  Matrix g = rank_objective_grad_h(fp.hidden(top), &res.r);
  backprop_hidden(model, fp, std::move(g), top, only_top, res.grads);
  return res;
}

std::string_view to_string(PretrainMode mode) noexcept {
  return mode == PretrainMode::layer_wise ? "layer_wise" : "end_to_end";
}

PretrainMode parse_pretrain_mode(std::string_view name) {
  if (name == "layer_wise") return PretrainMode::layer_wise;
  if (name == "end_to_end") return PretrainMode::end_to_end;
  throw InvalidInput("unknown pretrain mode '" + std::string(name) + "'");
}

void PretrainConfig::validate() const {
  if (minibatch_size < 1 || num_minibatches < 1 || steps_per_minibatch < 0)
    throw InvalidInput("pretrain sizes must be positive");
  if (!(step_size > 0.0)) throw InvalidInput("step_size must be positive");
  if (max_halvings < 0) throw InvalidInput("max_halvings must be non-negative");
}

namespace {

double r_at(const MlpModel& model, const Matrix& x, int layer) {
  const ForwardPass fp = forward(model, x, layer);
  return r_lower_bound(second_moment(fp.hidden(layer)));
}

Matrix draw_minibatch(const Matrix& data, Index size, RngHandle& rng) {
  Matrix out(data.rows(), size);
  for (Index j = 0; j < size; ++j)
    out.col(j) = data.col(static_cast<Index>(rng.below(static_cast<std::uint64_t>(data.cols()))));
  return out;
}

void apply_step(MlpModel& model, const Gradients& g, double eta, int top) {
  for (int l = 0; l < top; ++l) model.weights[static_cast<std::size_t>(l)] += eta * g.weights[static_cast<std::size_t>(l)];
}

}  // namespace

void calibrate_activation_scale(MlpModel& model, const Matrix& x) {
  const double target = x.squaredNorm() / static_cast<double>(x.size());
  if (!(target > 0.0)) throw DegenerateInput("calibration batch is zero");
  for (int l = 1; l <= model.hidden_layers(); ++l) {
    const ForwardPass fp = forward(model, x, l);
    const Matrix& h = fp.hidden(l);
    const double ms = h.squaredNorm() / static_cast<double>(h.size());
    if (!(ms > 0.0)) throw DegenerateInput("layer " + std::to_string(l) + " is dead on the calibration batch");
    model.weights[static_cast<std::size_t>(l - 1)] *= std::sqrt(target / ms);
  }
}

PretrainReport pretrain(MlpModel& model, const Matrix& data, const PretrainConfig& cfg, RngHandle& rng) {
  cfg.validate();
  model.validate();
  if (model.has_bn()) throw PreconditionError("pretraining targets networks without BN");
  const int L = model.hidden_layers();
  if (L < 1) throw InvalidInput("pretraining needs at least one hidden layer");
  if (data.rows() != model.layer_dims.front() || data.cols() < 1) throw InvalidInput("data does not match the model input");

  PretrainReport rep;
  const Matrix probe = draw_minibatch(data, cfg.minibatch_size, rng);
  rep.r_initial = r_at(model, probe, L);

  std::vector<int> targets;
  if (cfg.mode == PretrainMode::layer_wise)
    for (int l = 1; l <= L; ++l) targets.push_back(l);
  else
    targets.push_back(L);

  for (int target : targets) {
    std::vector<double> before;
    for (int j = 1; j < target; ++j) before.push_back(r_at(model, probe, j));
    const bool only_top = cfg.mode == PretrainMode::layer_wise && cfg.only_top_layer;

    for (int k = 0; k < cfg.num_minibatches; ++k) {
      const Matrix xb = k == 0 ? probe : draw_minibatch(data, cfg.minibatch_size, rng);
      int decreasing = 0;
      for (int t = 0; t < cfg.steps_per_minibatch; ++t) {
        const RankObjectiveResult g = backward_rank_objective(model, xb, target, only_top);
        double eta = cfg.step_size;
        double r_new = g.r;
        bool accepted = false;
        for (int h = 0; h <= (cfg.line_search ? cfg.max_halvings : 0); ++h, eta *= 0.5) {
          MlpModel trial = model;
          apply_step(trial, g.grads, eta, target);
          double r_trial;
          try {
            r_trial = r_at(trial, xb, target);
          } catch (const DegenerateInput&) {
            continue;  // step killed every unit
          }
          if (!cfg.line_search || r_trial > g.r) {
            model = std::move(trial);
            r_new = r_trial;
            accepted = true;
            break;
          }
        }
        rep.trace.push_back({target, k, t, r_new, accepted ? eta : 0.0});
        decreasing = r_new < g.r ? decreasing + 1 : 0;
        if (decreasing >= 10) throw StepSizeError("r decreased for 10 consecutive steps; lower the step size");
      }
    }
    for (int j = 1; j < target; ++j)
      if (r_at(model, probe, j) < 0.9 * before[static_cast<std::size_t>(j - 1)]) rep.interference.emplace_back(target, j);
  }
  if (cfg.calibrate_scale) calibrate_activation_scale(model, probe);
  rep.r_final = r_at(model, probe, L);
  return rep;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  check_labels(labels, logits.cols(), logits.rows());
  long correct = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    Index arg = 0;
    logits.col(j).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(j)];
  }
  return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

namespace {

EpochStats evaluate(const MlpModel& model, const Dataset& data, int epoch) {
  const ForwardPass fp = forward(model, data.x);
  EpochStats s;
  s.epoch = epoch;
  s.loss = softmax_ce_loss(fp.logits, data.labels);
  s.accuracy = accuracy(fp.logits, data.labels);
  const int L = model.hidden_layers();
  s.hard_rank_last = hard_rank(SingularSpectrum::from_matrix(L == 0 ? data.x : fp.hidden(L)));
  return s;
}

}  // namespace

std::vector<EpochStats> sgd_train(MlpModel& model, const Dataset& data, const SgdConfig& cfg, RngHandle& rng) {
  model.validate();
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr >= 0.0)) throw InvalidInput("invalid SGD settings");
  check_labels(data.labels, data.x.cols(), model.layer_dims.back());
  std::vector<EpochStats> out{evaluate(model, data, 0)};
  std::vector<Index> order(static_cast<std::size_t>(data.x.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  for (int e = 1; e <= cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (end - start < 2 && model.has_bn()) break;  // BN needs two samples
      Matrix xb(data.x.rows(), static_cast<Index>(end - start));
      std::vector<int> yb;
      for (std::size_t k = start; k < end; ++k) {
        xb.col(static_cast<Index>(k - start)) = data.x.col(order[k]);
        yb.push_back(data.labels[static_cast<std::size_t>(order[k])]);
      }
      const LossResult g = backward_loss(model, xb, yb);
      if (cfg.lr != 0.0)
        for (std::size_t l = 0; l < model.weights.size(); ++l) model.weights[l] -= cfg.lr * g.grads.weights[l];
    }
    for (const auto& w : model.weights)
      if (!w.allFinite()) throw NumericalOverflow("weights diverged in epoch " + std::to_string(e));
    out.push_back(evaluate(model, data, e));
  }
  return out;
}

AlignmentStats gradient_alignment_from_hidden(const Matrix& h_last, const Matrix& w_out,
                                              const std::vector<int>& labels) {
  if (w_out.cols() != h_last.rows()) throw InvalidInput("output weight does not match H_L");
  const Index n = h_last.cols();
  const Index k_out = w_out.rows();
  check_labels(labels, n, k_out);
  if (n < 2) throw InvalidInput("alignment needs at least two samples");

  Matrix coef = softmax_cols(w_out * h_last);
  for (Index j = 0; j < n; ++j) coef(labels[static_cast<std::size_t>(j)], j) -= 1.0;
  const Vector norms = h_last.colwise().norm().transpose();
  Matrix hn = h_last;
  for (Index j = 0; j < n; ++j)
    if (norms[j] > 0.0) hn.col(j) /= norms[j];
  const Matrix gram = hn.transpose() * hn;
  const double hmax = norms.maxCoeff();

  AlignmentStats st;
  st.per_neuron_mean.assign(static_cast<std::size_t>(k_out), 0.0);
  st.per_neuron_min.assign(static_cast<std::size_t>(k_out), 1.0);
  std::vector<double> sums(static_cast<std::size_t>(k_out), 0.0);
  std::vector<long> pairs(static_cast<std::size_t>(k_out), 0), excluded(static_cast<std::size_t>(k_out), 0);

#pragma omp parallel for schedule(static)
  for (Index k = 0; k < k_out; ++k) {
    std::vector<Index> valid;
    for (Index j = 0; j < n; ++j) {
      if (std::abs(coef(k, j)) * norms[j] > 1e-12 * std::max(hmax, 1e-300)) valid.push_back(j);
      else ++excluded[static_cast<std::size_t>(k)];
    }
    double sum = 0.0, mn = 1.0;
    long cnt = 0;
    for (std::size_t a = 0; a < valid.size(); ++a)
      for (std::size_t b = a + 1; b < valid.size(); ++b) {
        const double c = std::min(1.0, std::abs(gram(valid[a], valid[b])));
        sum += c;
        mn = std::min(mn, c);
        ++cnt;
      }
    sums[static_cast<std::size_t>(k)] = sum;
    pairs[static_cast<std::size_t>(k)] = cnt;
    st.per_neuron_mean[static_cast<std::size_t>(k)] = cnt ? sum / static_cast<double>(cnt) : 0.0;
    st.per_neuron_min[static_cast<std::size_t>(k)] = cnt ? mn : 0.0;
  }

  double total = 0.0;
  long total_pairs = 0;
  st.min_abs_cos = 1.0;
  for (Index k = 0; k < k_out; ++k) {
    const auto i = static_cast<std::size_t>(k);
    total += sums[i];
    total_pairs += pairs[i];
    st.excluded += excluded[i];
    if (pairs[i]) st.min_abs_cos = std::min(st.min_abs_cos, st.per_neuron_min[i]);
  }
  if (total_pairs == 0) throw DegenerateInput("fewer than two samples with a nonzero gradient");
  st.mean_abs_cos = total / static_cast<double>(total_pairs);
  return st;
}

AlignmentStats gradient_alignment(const MlpModel& model, const Matrix& x, const std::vector<int>& labels) {
  const ForwardPass fp = forward(model, x);
  const int L = model.hidden_layers();
  return gradient_alignment_from_hidden(L == 0 ? x : fp.hidden(L), model.weights.back(), labels);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "bnrank-mlp";
constexpr int kCheckpointVersion = 1;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::istringstream next(const std::string& expect_key) {
    std::string line;
    if (!std::getline(in_, line)) throw FormatError("checkpoint: unexpected end of file", line_no_);
    ++line_no_;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (!expect_key.empty() && key != expect_key)
      throw FormatError("checkpoint: expected '" + expect_key + "', got '" + key + "'", line_no_);
    return ss;
  }

  double parse_double(const std::string& tok) const {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || *end != '\0') throw FormatError("checkpoint: bad number '" + tok + "'", line_no_);
    return v;
  }

  template <class T>
  T parse_int(std::istringstream& ss) const {
    T v{};
    if (!(ss >> v)) throw FormatError("checkpoint: bad integer", line_no_);
    return v;
  }

  std::uint64_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::uint64_t line_no_ = 0;
};

}  // namespace

void save_checkpoint(const MlpModel& model, const std::filesystem::path& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string());
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "activation " << to_string(model.activation) << '\n';
  out << "gamma " << (is_no_skip(model.gamma) ? std::string("inf") : fmt_double(model.gamma)) << '\n';
  out << "centering " << (model.centering ? 1 : 0) << '\n';
  out << "bn_epsilon " << fmt_double(model.bn_epsilon) << '\n';
  out << "layer_dims " << model.layer_dims.size();
  for (Index d : model.layer_dims) out << ' ' << d;
  out << "\nuse_bn";
  for (bool b : model.use_bn) out << ' ' << (b ? 1 : 0);
  out << '\n';
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const Matrix& w = model.weights[l];
    out << "weight " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) out << (j ? " " : "") << fmt_double(w(i, j));
      out << '\n';
    }
  }
  out << "end\n";
  if (!out) throw InvalidInput("failed writing " + path.string());
}

MlpModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  LineReader rd(in);
  MlpModel m;

  {
    auto ss = rd.next(kCheckpointMagic);
    if (rd.parse_int<int>(ss) != kCheckpointVersion) throw FormatError("checkpoint: unsupported version", rd.line());
  }
  {
    auto ss = rd.next("activation");
    std::string v;
    ss >> v;
    try {
      m.activation = parse_activation(v);
    } catch (const InvalidInput&) {
      throw FormatError("checkpoint: unknown activation", rd.line());
    }
  }
  {
    auto ss = rd.next("gamma");
    std::string v;
    ss >> v;
    m.gamma = v == "inf" ? kNoSkip : rd.parse_double(v);
  }
  {
    auto ss = rd.next("centering");
    m.centering = rd.parse_int<int>(ss) != 0;
  }
  {
    auto ss = rd.next("bn_epsilon");
    std::string v;
    ss >> v;
    m.bn_epsilon = rd.parse_double(v);
  }
  {
    auto ss = rd.next("layer_dims");
    const auto count = rd.parse_int<std::size_t>(ss);
    if (count < 2 || count > 100000) throw FormatError("checkpoint: bad layer count", rd.line());
    for (std::size_t i = 0; i < count; ++i) m.layer_dims.push_back(rd.parse_int<Index>(ss));
  }
  {
    auto ss = rd.next("use_bn");
    for (std::size_t i = 0; i + 2 < m.layer_dims.size(); ++i) m.use_bn.push_back(rd.parse_int<int>(ss) != 0);
  }
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    auto ss = rd.next("weight");
    if (rd.parse_int<std::size_t>(ss) != l) throw FormatError("checkpoint: weights out of order", rd.line());
    const auto rows = rd.parse_int<Index>(ss);
    const auto cols = rd.parse_int<Index>(ss);
    if (rows != m.layer_dims[l + 1] || cols != m.layer_dims[l])
      throw FormatError("checkpoint: weight shape does not match layer_dims", rd.line());
    Matrix w(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      auto row = rd.next("");
      row.clear();
      row.seekg(0);
      std::string tok;
      for (Index j = 0; j < cols; ++j) {
        if (!(row >> tok)) throw FormatError("checkpoint: short weight row", rd.line());
        w(i, j) = rd.parse_double(tok);
      }
      if (row >> tok) throw FormatError("checkpoint: long weight row", rd.line());
    }
    m.weights.push_back(std::move(w));
  }
  rd.next("end");
  try {
    m.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), rd.line());
  }
  return m;
}

}  // namespace bnrank
