#include "dfl/optim.hpp"

#include <cmath>

#include "dfl/error.hpp"

namespace dfl {

Param& ParamStore::add(const std::string& name, Tensor init) {
    require(!contains(name), ErrorKind::InvalidArgument, "duplicate parameter '" + name + "'");
    Param p;
    p.grad = Tensor::zeros(init.shape());
    p.m = Tensor::zeros(init.shape());
    p.v = Tensor::zeros(init.shape());
    p.value = std::move(init);
    return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::InvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::InvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : params_) {
        p.grad.fill(0.0);
        p.has_grad = false;
    }
}

void ParamStore::accumulate_grad(const std::string& name, const Tensor& g, double factor) {
    Param& p = at(name);
    require(g.shape() == p.value.shape(), ErrorKind::Shape,
            "gradient for '" + name + "' has shape " + shape_str(g.shape()) + ", parameter is " +
                shape_str(p.value.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += factor * g[i];
    p.has_grad = true;
}

void adam_step(ParamStore& store, double lr, const AdamConfig& cfg) {
    for (const auto& [name, p] : store)
        require(p.has_grad, ErrorKind::Runtime, "adam_step: parameter '" + name + "' has no gradient");
    const auto t = static_cast<double>(store.step() + 1);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [_, p] : store) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p.m[i] / c1;
            const double vhat = p.v[i] / c2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    store.set_step(store.step() + 1);
    store.zero_grad();
}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& store, bool requires_grad) : tape_(&tape) {
    for (const auto& [name, p] : store) vars_.emplace(name, tape.leaf(p.value, requires_grad));
}

Var ParamBinding::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    require(it != vars_.end(), ErrorKind::InvalidArgument, "parameter '" + name + "' is not bound");
    return it->second;
}

void ParamBinding::accumulate_into(ParamStore& store, double factor) const {
    for (const auto& [name, v] : vars_) store.accumulate_grad(name, tape_->grad(v), factor);
}

}  // namespace dfl
