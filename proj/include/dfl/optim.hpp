#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfl/autodiff.hpp"
#include "dfl/tensor.hpp"

namespace dfl {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Param {
    Tensor value;
    Tensor grad;
    Tensor m;  // first moment
    Tensor v;  // second moment
    bool has_grad = false;
};

// Named parameters plus Adam state. Iteration order is by name.
class ParamStore {
public:
    Param& add(const std::string& name, Tensor init);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    const Tensor& value(const std::string& name) const { return at(name).value; }

    std::vector<std::string> names() const;
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }

    void zero_grad();
    // grad[name] += factor * g
    void accumulate_grad(const std::string& name, const Tensor& g, double factor = 1.0);

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Param> params_;
    std::uint64_t step_ = 0;
};

// One bias-corrected Adam update over every parameter; gradients are zeroed
// afterwards. Throws if any parameter has not received a gradient.
void adam_step(ParamStore& store, double lr, const AdamConfig& cfg = {});

// Binds every parameter of a store as a leaf on a tape for one forward pass.
// With requires_grad = false the tape records no backward closures.
class ParamBinding {
public:
    ParamBinding(Tape& tape, const ParamStore& store, bool requires_grad = true);

    Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.count(name) != 0; }

    // Adds each leaf gradient, scaled, into the store.
    void accumulate_into(ParamStore& store, double factor = 1.0) const;

private:
    Tape* tape_;
    std::map<std::string, Var> vars_;
};

}  // namespace dfl
