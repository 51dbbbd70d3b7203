#pragma once

#include <cmath>
#include <utility>

#include "sweet/truncated_value.hpp"
#include "sweet/types.hpp"

namespace sweet {

// Model-uncertainty functional fed to the constrained solver: a concave,
// continuous map from policies to nonnegative reals, with a supergradient
// with respect to raw policy entries.
class UncertaintyFunctional {
 public:
  virtual ~UncertaintyFunctional() = default;
  virtual double value(const TabularMdp& model,
                       const MarkovPolicy& pi) const = 0;
  virtual SaTable policy_gradient(const TabularMdp& model,
                                  const MarkovPolicy& pi) const = 0;
  virtual bool is_zero() const { return false; }
};

class ZeroUncertainty final : public UncertaintyFunctional {
 public:
  double value(const TabularMdp&, const MarkovPolicy&) const override {
    return 0.0;
  }
  SaTable policy_gradient(const TabularMdp& model,
                          const MarkovPolicy&) const override {
    return SaTable(model.horizon, model.num_states, model.num_actions, 0.0);
  }
  bool is_zero() const override { return true; }
};

// Uncertainty expressed through the clipped value of an exploration bonus:
// either scale * Vbar + offset, or outer * sqrt(Vbar). Both are concave and
// nondecreasing transforms of the concave Vbar.
class TruncatedValueUncertainty final : public UncertaintyFunctional {
 public:
  enum class Form { Linear, Sqrt };

  TruncatedValueUncertainty(SaTable bonus, double alpha, Form form,
                            double scale = 1.0, double offset = 0.0)
      : bonus_(std::move(bonus)),
        alpha_(alpha),
        form_(form),
        scale_(scale),
        offset_(offset) {}

  double value(const TabularMdp& model, const MarkovPolicy& pi) const override {
    double vbar = truncated_evaluate(model, pi, bonus_, alpha_).at_initial;
    return form_ == Form::Linear ? scale_ * vbar + offset_
                                 : scale_ * std::sqrt(vbar) + offset_;
  }

  SaTable policy_gradient(const TabularMdp& model,
                          const MarkovPolicy& pi) const override {
    TruncatedEval ev = truncated_evaluate(model, pi, bonus_, alpha_);
    SaTable g = truncated_subgradient(model, pi, bonus_, alpha_, &ev);
    double chain = scale_;
    if (form_ == Form::Sqrt) {
      double vbar = ev.at_initial;
      if (vbar < 1e-14) {
        // Flat to numerical precision; any tiny supergradient is valid.
        chain = 0.0;
      } else {
        chain = scale_ * 0.5 / std::sqrt(vbar);
      }
    }
    if (chain != 1.0)
      for (double& x : g.values) x *= chain;
    return g;
  }

  const SaTable& bonus() const { return bonus_; }
  double alpha() const { return alpha_; }

 private:
  SaTable bonus_;
  double alpha_;
  Form form_;
  double scale_;
  double offset_;
};

}  // namespace sweet
