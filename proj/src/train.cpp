#include "aspan/train.hpp"

#include <cmath>
#include <numeric>

#include "aspan/errors.hpp"

namespace aspan {

void TrainConfig::validate() const {
  if (epochs == 0) throw ParameterError("train: epochs must be positive");
  if (batch_size == 0) throw ParameterError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ParameterError("train: lr must be positive");
  if (halving_period == 0) throw ParameterError("train: halving_period must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("train: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ParameterError("train: eps must be positive");
  if (!(alpha >= 0.0)) throw ParameterError("train: alpha must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size},         {"lr", c.lr},
          {"warmup_epochs", c.warmup_epochs}, {"halving_period", c.halving_period}, {"beta1", c.beta1},
          {"beta2", c.beta2},       {"eps", c.eps},                       {"alpha", c.alpha},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "warmup_epochs") c.warmup_epochs = v.get<std::size_t>();
      else if (k == "halving_period") c.halving_period = v.get<std::size_t>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "eps") c.eps = v.get<double>();
      else if (k == "alpha") c.alpha = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ParameterError("train config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& c, std::size_t epoch, double progress) {
  if (epoch < c.warmup_epochs) {
    return c.lr * (static_cast<double>(epoch) + progress) / static_cast<double>(c.warmup_epochs);
  }
  const std::size_t halvings = (epoch - c.warmup_epochs) / c.halving_period;
  return c.lr * std::ldexp(1.0, -static_cast<int>(halvings));
}

void Adam::step(ModelWeights& w, double lr, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  w.visit([&](const std::string&, Var& p) {
    if (k == m_.size()) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    ++k;
    if (!p.has_grad()) return;
    const Tensor& g = p.node()->grad;
    Tensor& x = p.mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i] * grad_scale;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    p.zero_grad();
  });
}

nlohmann::json to_json(const EpochStats& s) {
  return {{"epoch", s.epoch}, {"lr", s.lr},       {"coarse", s.coarse}, {"fine", s.fine},
          {"flow", s.flow},   {"total", s.total}, {"pairs", s.pairs}};
}

namespace {

bool gradients_finite(ModelWeights& w) {
  bool ok = true;
  w.visit([&](const std::string&, Var& p) {
    if (ok && p.has_grad() && !p.node()->grad.all_finite()) ok = false;
  });
  return ok;
}

}  // namespace

std::vector<EpochStats> train_model(ModelWeights& w, const ModelConfig& mc, const TrainConfig& tc,
                                    const std::vector<SynthPair>& data, const EpochCallback& on_epoch) {
  mc.validate();
  tc.validate();
  if (data.empty()) throw InputError("train: empty dataset");
  std::vector<PairTargets> targets;
  targets.reserve(data.size());
  for (const SynthPair& p : data) targets.push_back(make_targets(p));

  Adam opt(tc.beta1, tc.beta2, tc.eps);
  std::vector<EpochStats> history;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t steps = (data.size() + tc.batch_size - 1) / tc.batch_size;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(tc.seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    EpochStats st;
    st.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t begin = s * tc.batch_size, end = std::min(begin + tc.batch_size, order.size());
      std::vector<std::uint64_t> seeds;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t k = order[b];
        seeds.push_back(data[k].seed);
        ForwardOutput out = forward(w, mc, data[k].image_a, data[k].image_b);
        LossParts l = compute_loss(out, targets[k], mc, tc.alpha);
        const double total = l.total.value()[0];
        if (!std::isfinite(total)) {
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s),
                                 seeds, epoch, s);
        }
        backward(l.total);
        st.coarse += l.coarse;
        st.fine += l.fine;
        st.flow += l.flow;
        st.total += total;
        ++st.pairs;
      }
      if (!gradients_finite(w)) {
        throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(epoch) + " step " + std::to_string(s),
                               seeds, epoch, s);
      }
      st.lr = learning_rate(tc, epoch, static_cast<double>(s + 1) / static_cast<double>(steps));
      opt.step(w, st.lr, 1.0 / static_cast<double>(end - begin));
    }
    const double n = static_cast<double>(st.pairs);
    st.coarse /= n;
    st.fine /= n;
    st.flow /= n;
    st.total /= n;
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

}  // namespace aspan
