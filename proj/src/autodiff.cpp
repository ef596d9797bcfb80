#include "narasr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "narasr/errors.hpp"

namespace narasr::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  require_finite(value, "taped forward operation");
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& in : inputs) needs = needs || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.empty() && !n.value.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) throw DimensionError("gradient shape does not match its node");
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  auto dst = n.grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ArgumentError("backward: loss belongs to another tape");
  if (nodes_[loss.id_].value.size() != 1) throw ArgumentError("backward: loss is not a scalar");
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id_].requires_grad) return;
  nodes_[loss.id_].grad = Tensor::scalar(1.0);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    // Copy: the closure may accumulate into nodes_ but never resizes it.
    const Tensor upstream = n.grad;
    n.backward(upstream, *this);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ArgumentError("operands live on different tapes");
  return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var ins[] = {a, b};
  return t.record(narasr::matmul(a.value(), b.value()), ins,
                  [a, b](const Tensor& g, Tape& tp) {
                    if (tp.requires_grad(a)) tp.accumulate(a, narasr::matmul_nt(g, tp.value(b)));
                    if (tp.requires_grad(b)) tp.accumulate(b, narasr::matmul_tn(tp.value(a), g));
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var ins[] = {a, b};
  return t.record(narasr::matmul_nt(a.value(), b.value()), ins,
                  [a, b](const Tensor& g, Tape& tp) {
                    if (tp.requires_grad(a)) tp.accumulate(a, narasr::matmul(g, tp.value(b)));
                    if (tp.requires_grad(b)) tp.accumulate(b, narasr::matmul_tn(g, tp.value(a)));
                  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  Var ins[] = {a, b};
  return t.record(std::move(out), ins, [a, b](const Tensor& g, Tape& tp) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  Var ins[] = {a, b};
  return t.record(std::move(out), ins, [a, b](const Tensor& g, Tape& tp) {
    tp.accumulate(a, g);
    Tensor neg = g;
    for (double& v : neg.values()) v = -v;
    tp.accumulate(b, neg);
  });
}

Var add_row(Var m, Var bias) {
  Tape& t = same_tape(m, bias);
  const Tensor& mv = m.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != mv.cols()) {
    throw DimensionError("add_row: bias must be 1x" + std::to_string(mv.cols()));
  }
  Tensor out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  Var ins[] = {m, bias};
  return t.record(std::move(out), ins, [m, bias](const Tensor& g, Tape& tp) {
    tp.accumulate(m, g);
    if (tp.requires_grad(bias)) {
      Tensor gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
      tp.accumulate(bias, gb);
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  Var ins[] = {a};
  return a.tape()->record(std::move(out), ins, [a, s](const Tensor& g, Tape& tp) {
    Tensor ga = g;
    for (double& v : ga.values()) v *= s;
    tp.accumulate(a, ga);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  Var ins[] = {a, b};
  return t.record(std::move(out), ins, [a, b](const Tensor& g, Tape& tp) {
    const auto gv = g.values();
    if (tp.requires_grad(a)) {
      Tensor ga = g;
      auto bvals = tp.value(b).values();
      for (std::size_t i = 0; i < gv.size(); ++i) ga[i] = gv[i] * bvals[i];
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Tensor gb = g;
      auto avals = tp.value(a).values();
      for (std::size_t i = 0; i < gv.size(); ++i) gb[i] = gv[i] * avals[i];
      tp.accumulate(b, gb);
    }
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  Var ins[] = {a};
  return a.tape()->record(std::move(out), ins, [a](const Tensor& g, Tape& tp) {
    Tensor ga = g;
    auto x = tp.value(a).values();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] > 0.0)) ga[i] = 0.0;
    tp.accumulate(a, ga);
  });
}

Var softmax_rows(Var m) {
  Tensor out = narasr::softmax_rows(m.value());
  Tensor saved = out;
  Var ins[] = {m};
  return m.tape()->record(std::move(out), ins,
                          [m, y = std::move(saved)](const Tensor& g, Tape& tp) {
                            Tensor gm(g.rows(), g.cols());
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                              const auto yr = y.row(r);
                              const auto gr = g.row(r);
                              double dot = 0.0;
                              for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
                              auto out_row = gm.row(r);
                              for (std::size_t c = 0; c < yr.size(); ++c)
                                out_row[c] = yr[c] * (gr[c] - dot);
                            }
                            tp.accumulate(m, gm);
                          });
}

Var log_softmax_rows(Var m) {
  Tensor out = narasr::log_softmax_rows(m.value());
  Tensor saved = out;
  Var ins[] = {m};
  return m.tape()->record(std::move(out), ins,
                          [m, y = std::move(saved)](const Tensor& g, Tape& tp) {
                            Tensor gm(g.rows(), g.cols());
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                              const auto gr = g.row(r);
                              const double total = std::accumulate(gr.begin(), gr.end(), 0.0);
                              const auto yr = y.row(r);
                              auto o = gm.row(r);
                              for (std::size_t c = 0; c < gr.size(); ++c)
                                o[c] = gr[c] - std::exp(yr[c]) * total;
                            }
                            tp.accumulate(m, gm);
                          });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != cols || !gain.value().same_shape(bias.value())) {
    throw DimensionError("layer_norm: gain and bias must be 1x" + std::to_string(cols));
  }
  Tensor xhat(rows, cols);
  Tensor inv_std(rows, 1);
  Tensor out(rows, cols);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      xhat(r, c) = (in[c] - mean) * is;
      out(r, c) = gv[c] * xhat(r, c) + bv[c];
    }
  }
  Var ins[] = {x, gain, bias};
  return t.record(std::move(out), ins,
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      const Tensor& g, Tape& tp) {
                    const std::size_t rows = g.rows(), cols = g.cols();
                    const Tensor& gv = tp.value(gain);
                    if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
                      Tensor gg(1, cols), gb(1, cols);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) {
                          gg[c] += g(r, c) * xhat(r, c);
                          gb[c] += g(r, c);
                        }
                      tp.accumulate(gain, gg);
                      tp.accumulate(bias, gb);
                    }
                    if (tp.requires_grad(x)) {
                      Tensor gx(rows, cols);
                      const double n = static_cast<double>(cols);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double d = g(r, c) * gv[c];
                          mean_d += d;
                          mean_dx += d * xhat(r, c);
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double d = g(r, c) * gv[c];
                          gx(r, c) = inv_std[r] * (d - mean_d - xhat(r, c) * mean_dx);
                        }
                      }
                      tp.accumulate(x, gx);
                    }
                  });
}

Var slice_cols(Var m, std::size_t begin, std::size_t count) {
  const Tensor& mv = m.value();
  if (begin + count > mv.cols()) throw DimensionError("slice_cols: range exceeds column count");
  Tensor out(mv.rows(), count);
  for (std::size_t r = 0; r < mv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = mv(r, begin + c);
  Var ins[] = {m};
  return m.tape()->record(std::move(out), ins, [m, begin, count](const Tensor& g, Tape& tp) {
    const Tensor& mv = tp.value(m);
    Tensor gm(mv.rows(), mv.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) gm(r, begin + c) = g(r, c);
    tp.accumulate(m, gm);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    off += pv.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts,
                                 [saved](const Tensor& g, Tape& tp) {
                                   std::size_t off = 0;
                                   for (const Var& p : saved) {
                                     const std::size_t pc = tp.value(p).cols();
                                     if (tp.requires_grad(p)) {
                                       Tensor gp(g.rows(), pc);
                                       for (std::size_t r = 0; r < g.rows(); ++r)
                                         for (std::size_t c = 0; c < pc; ++c) gp(r, c) = g(r, off + c);
                                       tp.accumulate(p, gp);
                                     }
                                     off += pc;
                                   }
                                 });
}

Var sum(Var a) {
  const auto vals = a.value().values();
  const double s = std::accumulate(vals.begin(), vals.end(), 0.0);
  Var ins[] = {a};
  return a.tape()->record(Tensor::scalar(s), ins, [a](const Tensor& g, Tape& tp) {
    const Tensor& av = tp.value(a);
    tp.accumulate(a, Tensor(av.rows(), av.cols(), g.item()));
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::span<const std::size_t> rows) {
  const Tensor& lv = logits.value();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  if (rows.empty()) {
    if (targets.size() != lv.rows()) {
      throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                           " targets for " + std::to_string(lv.rows()) + " rows");
    }
    picked.resize(lv.rows());
    std::iota(picked.begin(), picked.end(), std::size_t{0});
  } else if (targets.size() != rows.size()) {
    throw DimensionError("cross_entropy: targets and selected rows differ in count");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (picked[i] >= lv.rows() || tgt[i] >= lv.cols()) {
      throw DimensionError("cross_entropy: row or target index out of range");
    }
    const auto row = lv.row(picked[i]);
    total += log_sum_exp(row) - row[tgt[i]];
  }
  const double n = static_cast<double>(picked.size());
  const double value = picked.empty() ? 0.0 : total / n;
  Var ins[] = {logits};
  return logits.tape()->record(
      Tensor::scalar(value), ins,
      [logits, picked = std::move(picked), tgt = std::move(tgt)](const Tensor& g, Tape& tp) {
        const Tensor& lv = tp.value(logits);
        Tensor gl(lv.rows(), lv.cols());
        if (picked.empty()) {
          tp.accumulate(logits, gl);
          return;
        }
        const double w = g.item() / static_cast<double>(picked.size());
        for (std::size_t i = 0; i < picked.size(); ++i) {
          const auto row = lv.row(picked[i]);
          const double lse = log_sum_exp(row);
          auto gr = gl.row(picked[i]);
          for (std::size_t c = 0; c < row.size(); ++c) gr[c] += w * std::exp(row[c] - lse);
          gr[tgt[i]] -= w;
        }
        tp.accumulate(logits, gl);
      });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, const AttentionWeights& w) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_attention: model dimension " + std::to_string(d) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("multi_head_attention: key/value shapes disagree with query");
  }
  const std::size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  Var qp = add_row(matmul(q, w.wq), w.bq);
  Var kp = add_row(matmul(k, w.wk), w.bk);
  Var vp = add_row(matmul(v, w.wv), w.bv);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? qp : slice_cols(qp, h * dh, dh);
    Var kh = heads == 1 ? kp : slice_cols(kp, h * dh, dh);
    Var vh = heads == 1 ? vp : slice_cols(vp, h * dh, dh);
    Var weights = softmax_rows(scale(matmul_nt(qh, kh), scale_factor));
    outs.push_back(matmul(weights, vh));
  }
  Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return add_row(matmul(merged, w.wo), w.bo);
}

double grad_check(const ScalarFn& f, std::span<const Tensor> params, const GradCheckOptions& opts) {
  std::vector<Tensor> analytic;
  {
    Tape tape(true);
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.variable(p));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }
  std::vector<Tensor> work(params.begin(), params.end());
  auto evaluate = [&]() {
    Tape tape(false);
    std::vector<Var> vars;
    for (const Tensor& p : work) vars.push_back(tape.constant(p));
    return f(tape, vars).value().item();
  };
  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    const std::size_t n = work[pi].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.samples_per_param != 0 && opts.samples_per_param < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.samples_per_param);
    }
    for (std::size_t idx : coords) {
      const double orig = work[pi][idx];
      work[pi][idx] = orig + opts.eps;
      const double fp = evaluate();
      work[pi][idx] = orig - opts.eps;
      const double fm = evaluate();
      work[pi][idx] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double a = analytic[pi][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace narasr::ad
