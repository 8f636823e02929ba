#include "gwinv/net.hpp"

#include <cmath>
#include <sstream>

#include "gwinv/common.hpp"

namespace gwinv {

void MlpSpec::validate() const {
  if (n_inputs < 1 || n_outputs < 1)
    throw ConfigError("mlp spec: input/output widths must be >= 1");
  for (int w : hidden)
    if (w < 1) throw ConfigError("mlp spec: hidden widths must be >= 1");
}

Mlp Mlp::create(MlpSpec spec) {
  spec.validate();
  Mlp net;
  net.spec = std::move(spec);
  std::vector<int> widths;
  widths.push_back(net.spec.n_inputs);
  for (int w : net.spec.hidden) widths.push_back(w);
  widths.push_back(net.spec.n_outputs);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    net.W.emplace_back(Eigen::MatrixXd::Zero(widths[l + 1], widths[l]));
    net.b.emplace_back(Eigen::VectorXd::Zero(widths[l + 1]));
  }
  net.in_shift = Eigen::VectorXd::Zero(net.spec.n_inputs);
  net.in_scale = Eigen::VectorXd::Ones(net.spec.n_inputs);
  return net;
}

int Mlp::n_params() const {
  int n = 0;
  for (std::size_t l = 0; l < W.size(); ++l)
    n += static_cast<int>(W[l].size() + b[l].size());
  return n;
}

void Mlp::init_glorot(Rng& rng) {
  for (std::size_t l = 0; l < W.size(); ++l) {
    double limit = std::sqrt(6.0 / (W[l].cols() + W[l].rows()));
    for (int r = 0; r < W[l].rows(); ++r)
      for (int c = 0; c < W[l].cols(); ++c) W[l](r, c) = rng.uniform(-limit, limit);
    b[l].setZero();
  }
}

Eigen::VectorXd Mlp::params() const {
  Eigen::VectorXd theta(n_params());
  int at = 0;
  for (std::size_t l = 0; l < W.size(); ++l) {
    for (int r = 0; r < W[l].rows(); ++r)
      for (int c = 0; c < W[l].cols(); ++c) theta(at++) = W[l](r, c);
    for (int r = 0; r < b[l].size(); ++r) theta(at++) = b[l](r);
  }
  return theta;
}

void Mlp::set_params(const Eigen::VectorXd& theta) {
  if (theta.size() != n_params())
    throw ConfigError("set_params: wrong parameter count");
  int at = 0;
  for (std::size_t l = 0; l < W.size(); ++l) {
    for (int r = 0; r < W[l].rows(); ++r)
      for (int c = 0; c < W[l].cols(); ++c) W[l](r, c) = theta(at++);
    for (int r = 0; r < b[l].size(); ++r) b[l](r) = theta(at++);
  }
}

void Mlp::normalize_input(int k, double lo, double hi) {
  if (k < 0 || k >= spec.n_inputs)
    throw ConfigError("normalize_input: coordinate out of range");
  if (!(hi > lo)) throw ConfigError("normalize_input: need hi > lo");
  in_shift(k) = 0.5 * (lo + hi);
  in_scale(k) = 2.0 / (hi - lo);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != spec.n_inputs)
    throw ConfigError("forward: input width mismatch");
  Eigen::MatrixXd z =
      (inputs.colwise() - in_shift).array().colwise() * in_scale.array();
  const int H = n_layers() - 1;
  for (int l = 0; l < H; ++l)
    z = ((W[l] * z).colwise() + b[l]).array().tanh();
  Eigen::MatrixXd raw = (W[H] * z).colwise() + b[H];
  return (raw.array() * out_scale + out_shift).matrix();
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  return forward(Eigen::MatrixXd(input)).col(0);
}

NetTape::NetTape(const Mlp& net, Eigen::MatrixXd inputs,
                 std::vector<DerivCoord> coords)
    : net_(&net), inputs_(std::move(inputs)), coords_(std::move(coords)) {
  if (inputs_.rows() != net.spec.n_inputs)
    throw ConfigError("tape: input width mismatch");
  for (const auto& c : coords_) {
    if (c.coord < 0 || c.coord >= net.spec.n_inputs)
      throw ConfigError("tape: derivative coordinate out of range");
    if (c.order != 1 && c.order != 2)
      throw ConfigError("tape: derivative order must be 1 or 2");
  }
  const int H = net.n_layers() - 1;
  const int B = static_cast<int>(inputs_.cols());
  const int C = static_cast<int>(coords_.size());

  z_.resize(H + 1);
  z_[0] = (inputs_.colwise() - net.in_shift).array().colwise() *
          net.in_scale.array();
  p_.assign(C, std::vector<Eigen::MatrixXd>(H));
  q_.assign(C, std::vector<Eigen::MatrixXd>(H));
  v_.assign(C, std::vector<Eigen::MatrixXd>(H));
  w_.assign(C, std::vector<Eigen::MatrixXd>(H));

  for (int l = 0; l < H; ++l) {
    Eigen::MatrixXd a = (net.W[l] * z_[l]).colwise() + net.b[l];
    z_[l + 1] = a.array().tanh();
    Eigen::ArrayXXd s1 = 1.0 - z_[l + 1].array().square();
    Eigen::ArrayXXd s2 = -2.0 * z_[l + 1].array() * s1;
    for (int c = 0; c < C; ++c) {
      const bool second = coords_[c].order == 2;
      if (l == 0) {
        Eigen::VectorXd col =
            net.in_scale(coords_[c].coord) * net.W[0].col(coords_[c].coord);
        p_[c][0] = col.replicate(1, B);
        if (second) q_[c][0] = Eigen::MatrixXd::Zero(col.size(), B);
      } else {
        p_[c][l] = net.W[l] * v_[c][l - 1];
        if (second) q_[c][l] = net.W[l] * w_[c][l - 1];
      }
      v_[c][l] = (s1 * p_[c][l].array()).matrix();
      if (second)
        w_[c][l] =
            (s2 * p_[c][l].array().square() + s1 * q_[c][l].array()).matrix();
    }
  }

  const double os = net.out_scale;
  Eigen::MatrixXd raw = (net.W[H] * z_[H]).colwise() + net.b[H];
  out_.value = (raw.array() * os + net.out_shift).matrix();
  out_.d1.resize(C);
  out_.d2.resize(C);
  for (int c = 0; c < C; ++c) {
    if (H == 0) {
      Eigen::VectorXd col =
          os * net.in_scale(coords_[c].coord) * net.W[0].col(coords_[c].coord);
      out_.d1[c] = col.replicate(1, B);
      if (coords_[c].order == 2)
        out_.d2[c] = Eigen::MatrixXd::Zero(col.size(), B);
    } else {
      out_.d1[c] = os * (net.W[H] * v_[c][H - 1]);
      if (coords_[c].order == 2) out_.d2[c] = os * (net.W[H] * w_[c][H - 1]);
    }
  }
}

void NetTape::backward(const Seeds& seeds, Eigen::VectorXd* grad_params,
                       Eigen::MatrixXd* grad_inputs) const {
  const Mlp& net = *net_;
  const int H = net.n_layers() - 1;
  const int B = static_cast<int>(inputs_.cols());
  const int C = static_cast<int>(coords_.size());
  const double os = net.out_scale;

  auto seeded = [](const std::vector<Eigen::MatrixXd>& s, int c) {
    return c < static_cast<int>(s.size()) && s[c].size() > 0;
  };
  std::vector<bool> active(C, false);
  for (int c = 0; c < C; ++c) {
    active[c] = seeded(seeds.d1, c) || seeded(seeds.d2, c);
    if (seeded(seeds.d2, c) && coords_[c].order != 2)
      throw ConfigError("backward: second-order seed on a first-order channel");
  }

  // Offsets of each layer's W/b block in the flat parameter vector.
  std::vector<int> w_off(H + 1), b_off(H + 1);
  {
    int at = 0;
    for (int l = 0; l <= H; ++l) {
      w_off[l] = at;
      at += static_cast<int>(net.W[l].size());
      b_off[l] = at;
      at += static_cast<int>(net.b[l].size());
    }
  }
  auto add_w = [&](int l, const Eigen::MatrixXd& g) {
    if (!grad_params) return;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>
        block(grad_params->data() + w_off[l], net.W[l].rows(), net.W[l].cols());
    block += g;
  };
  auto add_b = [&](int l, const Eigen::VectorXd& g) {
    if (!grad_params) return;
    grad_params->segment(b_off[l], g.size()) += g;
  };

  // Final linear layer.
  Eigen::MatrixXd zbar;  // adjoint of the layer-H input z_[H]
  std::vector<Eigen::MatrixXd> vbar(C), wbar(C);
  {
    Eigen::MatrixXd rawbar = seeds.value.size() > 0
                                 ? (os * seeds.value).eval()
                                 : Eigen::MatrixXd::Zero(net.spec.n_outputs, B);
    if (grad_params) {
      add_w(H, rawbar * z_[H].transpose());
      add_b(H, rawbar.rowwise().sum());
    }
    zbar = net.W[H].transpose() * rawbar;
    for (int c = 0; c < C; ++c) {
      if (!active[c]) continue;
      if (H == 0) continue;  // tangents through a linear net carry no params
      if (seeded(seeds.d1, c)) {
        Eigen::MatrixXd pbar = os * seeds.d1[c];
        add_w(H, pbar * v_[c][H - 1].transpose());
        vbar[c] = net.W[H].transpose() * pbar;
      }
      if (seeded(seeds.d2, c)) {
        Eigen::MatrixXd qbar = os * seeds.d2[c];
        add_w(H, qbar * w_[c][H - 1].transpose());
        wbar[c] = net.W[H].transpose() * qbar;
      }
    }
    if (H == 0) {
      // d1 of a purely linear net still depends on W[0].
      for (int c = 0; c < C; ++c) {
        if (!seeded(seeds.d1, c)) continue;
        Eigen::MatrixXd pbar = os * seeds.d1[c];
        if (grad_params) {
          Eigen::MatrixXd g = Eigen::MatrixXd::Zero(net.W[0].rows(), net.W[0].cols());
          g.col(coords_[c].coord) =
              net.in_scale(coords_[c].coord) * pbar.rowwise().sum();
          add_w(0, g);
        }
      }
    }
  }

  // Hidden layers, top down.
  for (int l = H - 1; l >= 0; --l) {
    Eigen::ArrayXXd zl = z_[l + 1].array();
    Eigen::ArrayXXd s1 = 1.0 - zl.square();
    Eigen::ArrayXXd s2 = -2.0 * zl * s1;
    Eigen::ArrayXXd abar = s1 * zbar.array();
    std::vector<Eigen::MatrixXd> pbar(C), qbar(C);
    for (int c = 0; c < C; ++c) {
      if (!active[c]) continue;
      Eigen::ArrayXXd pl = p_[c][l].array();
      if (vbar[c].size() > 0) {
        abar += s2 * pl * vbar[c].array();
        pbar[c] = (s1 * vbar[c].array()).matrix();
      }
      if (wbar[c].size() > 0) {
        Eigen::ArrayXXd s3 = s1 * (6.0 * zl.square() - 2.0);
        Eigen::ArrayXXd ql = q_[c][l].array();
        abar += s3 * pl.square() * wbar[c].array() + s2 * ql * wbar[c].array();
        Eigen::ArrayXXd extra = 2.0 * s2 * pl * wbar[c].array();
        if (pbar[c].size() > 0)
          pbar[c].array() += extra;
        else
          pbar[c] = extra.matrix();
        qbar[c] = (s1 * wbar[c].array()).matrix();
      }
    }

    Eigen::MatrixXd abar_m = abar.matrix();
    if (grad_params) {
      Eigen::MatrixXd wg = abar_m * z_[l].transpose();
      for (int c = 0; c < C; ++c) {
        if (!active[c]) continue;
        if (l > 0) {
          if (pbar[c].size() > 0) wg += pbar[c] * v_[c][l - 1].transpose();
          if (qbar[c].size() > 0) wg += qbar[c] * w_[c][l - 1].transpose();
        } else if (pbar[c].size() > 0) {
          // Input tangent is in_scale_c * e_c in every batch column.
          wg.col(coords_[c].coord) +=
              net.in_scale(coords_[c].coord) * pbar[c].rowwise().sum();
        }
      }
      add_w(l, wg);
      add_b(l, abar_m.rowwise().sum());
    }

    zbar = net.W[l].transpose() * abar_m;
    for (int c = 0; c < C; ++c) {
      if (!active[c]) continue;
      vbar[c] = pbar[c].size() > 0
                    ? (net.W[l].transpose() * pbar[c]).eval()
                    : Eigen::MatrixXd();
      wbar[c] = qbar[c].size() > 0
                    ? (net.W[l].transpose() * qbar[c]).eval()
                    : Eigen::MatrixXd();
    }
  }

  if (grad_inputs)
    grad_inputs->noalias() +=
        (zbar.array().colwise() * net.in_scale.array()).matrix();
}

EvalResult grad_inputs(const Mlp& net, const Eigen::VectorXd& input, int order,
                       const std::vector<int>& coords) {
  std::vector<DerivCoord> dc;
  dc.reserve(coords.size());
  for (int c : coords) dc.push_back(DerivCoord{c, order});
  NetTape tape(net, Eigen::MatrixXd(input), std::move(dc));
  return tape.out();
}

double grad_params(const Mlp& net, const Eigen::MatrixXd& inputs,
                   const std::vector<DerivCoord>& coords, const LossSeedFn& loss,
                   Eigen::VectorXd* grad) {
  NetTape tape(net, inputs, coords);
  NetTape::Seeds seeds;
  double value = loss(tape.out(), seeds);
  if (grad) {
    grad->setZero(net.n_params());
    tape.backward(seeds, grad, nullptr);
  }
  return value;
}

AdamState::AdamState(double learning_rate, int n_vars)
    : lr(learning_rate),
      m(Eigen::VectorXd::Zero(n_vars)),
      v(Eigen::VectorXd::Zero(n_vars)) {}

void adam_step(AdamState& state, Eigen::VectorXd& vars,
               const Eigen::VectorXd& grad) {
  if (vars.size() != state.m.size() || grad.size() != state.m.size())
    throw ConfigError("adam_step: size mismatch");
  ++state.step_count;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v.array().matrix() +
            (1.0 - state.beta2) * grad.array().square().matrix();
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  vars.array() -= state.lr * (state.m.array() / c1) /
                  ((state.v.array() / c2).sqrt() + state.eps);
}

std::string net_to_string(const Mlp& net) {
  std::ostringstream out;
  out << "gwinv-net 1\n";
  out << "inputs " << net.spec.n_inputs << "\n";
  out << "hidden " << net.spec.hidden.size();
  for (int w : net.spec.hidden) out << " " << w;
  out << "\n";
  out << "outputs " << net.spec.n_outputs << "\n";
  out << "in_shift";
  for (int i = 0; i < net.in_shift.size(); ++i) out << " " << fmt17(net.in_shift(i));
  out << "\nin_scale";
  for (int i = 0; i < net.in_scale.size(); ++i) out << " " << fmt17(net.in_scale(i));
  out << "\nout_affine " << fmt17(net.out_shift) << " " << fmt17(net.out_scale)
      << "\n";
  Eigen::VectorXd theta = net.params();
  out << "params " << theta.size() << "\n";
  for (int i = 0; i < theta.size(); ++i) out << fmt17(theta(i)) << "\n";
  return out.str();
}

void save_net(const Mlp& net, const std::string& path) {
  write_text_file(path, net_to_string(net));
}

Mlp net_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string tok;
  int version = 0;
  in >> tok >> version;
  if (tok != "gwinv-net" || version != 1)
    throw IoError("not a gwinv-net v1 checkpoint");
  MlpSpec spec;
  in >> tok;
  if (tok != "inputs") throw IoError("net checkpoint: expected 'inputs'");
  in >> spec.n_inputs;
  in >> tok;
  if (tok != "hidden") throw IoError("net checkpoint: expected 'hidden'");
  int nh = 0;
  in >> nh;
  spec.hidden.resize(nh);
  for (int i = 0; i < nh; ++i) in >> spec.hidden[i];
  in >> tok;
  if (tok != "outputs") throw IoError("net checkpoint: expected 'outputs'");
  in >> spec.n_outputs;
  Mlp net = Mlp::create(spec);
  in >> tok;
  if (tok != "in_shift") throw IoError("net checkpoint: expected 'in_shift'");
  for (int i = 0; i < net.in_shift.size(); ++i) in >> net.in_shift(i);
  in >> tok;
  if (tok != "in_scale") throw IoError("net checkpoint: expected 'in_scale'");
  for (int i = 0; i < net.in_scale.size(); ++i) in >> net.in_scale(i);
  in >> tok;
  if (tok != "out_affine") throw IoError("net checkpoint: expected 'out_affine'");
  in >> net.out_shift >> net.out_scale;
  in >> tok;
  long long count = 0;
  if (tok != "params") throw IoError("net checkpoint: expected 'params'");
  in >> count;
  if (count != net.n_params())
    throw IoError("net checkpoint: parameter count mismatch");
  Eigen::VectorXd theta(count);
  for (long long i = 0; i < count; ++i) in >> theta(i);
  if (!in) throw IoError("net checkpoint truncated");
  net.set_params(theta);
  return net;
}

Mlp load_net(const std::string& path) {
  return net_from_string(read_text_file(path));
}

}  // namespace gwinv
