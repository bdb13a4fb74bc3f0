#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "unigraph/tape.hpp"

namespace unigraph {

// Adam with decoupled weight decay, applied uniformly to every registered
// parameter. The parameter list is fixed at construction; the EMA target
// network is simply never registered.
class AdamW {
public:
  AdamW(NamedParams params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, p] : params) {
      Slot s;
      s.name = name;
      s.param = p;
      s.m = Matrix(p->value.rows(), p->value.cols());
      s.v = Matrix(p->value.rows(), p->value.cols());
      slots_.push_back(std::move(s));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& s : slots_) {
      double* w = s.param->value.data();
      const double* g = s.param->grad.data();
      double* m = s.m.data();
      double* v = s.v.data();
      for (std::size_t i = 0; i < s.param->value.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
      }
    }
  }

  long long step_count() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }
  double weight_decay() const { return weight_decay_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (const auto& s : slots_) names.push_back(s.name);
    return names;
  }

  std::vector<std::pair<std::string, const Matrix*>> moment_tensors() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (const auto& s : slots_) {
      out.emplace_back("opt.m." + s.name, &s.m);
      out.emplace_back("opt.v." + s.name, &s.v);
    }
    return out;
  }

  void restore(const std::map<std::string, Matrix>& tensors, long long t) {
    for (auto& s : slots_) {
      auto im = tensors.find("opt.m." + s.name);
      auto iv = tensors.find("opt.v." + s.name);
      if (im == tensors.end() || iv == tensors.end())
        throw std::runtime_error("checkpoint missing optimizer state for " + s.name);
      s.m = im->second;
      s.v = iv->second;
    }
    t_ = t;
  }

private:
  struct Slot {
    std::string name;
    Parameter* param = nullptr;
    Matrix m, v;
  };

  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace unigraph
