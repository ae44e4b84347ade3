#include "dfl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>
#include <vector>

#include "dfl/error.hpp"

namespace dfl {

namespace {

double rel_error(double analytic, double numeric) {
    const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / den;
}

std::vector<bool> relu_pattern(const Tape& t) {
    std::vector<bool> out;
    for (std::size_t id = 0; id < t.size(); ++id) {
        const int i = static_cast<int>(id);
        if (std::string_view(t.op_name(i)) != "relu") continue;
        for (double v : t.value(i).data()) out.push_back(v > 0.0);
    }
    return out;
}

struct Eval {
    double value;
    std::vector<bool> pattern;
};

void consider(GradCheckResult& r, std::size_t index, const std::string& name, double a, double n, bool kink) {
    const double e = rel_error(a, n);
    if (kink)
        ++r.kinks_crossed;
    else
        r.max_rel_error_smooth = std::max(r.max_rel_error_smooth, e);
    if (r.coordinates == 0 || e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst_index = index;
        r.worst_name = name;
        r.analytic = a;
        r.numeric = n;
    }
    ++r.coordinates;
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& fn, const Tensor& x, double h) {
    require(h > 0.0, ErrorKind::InvalidArgument, "finite_diff_check: step must be positive");
    Tensor analytic;
    {
        Tape tape;
        Var xv = tape.leaf(x, true);
        Var loss = fn(tape, xv);
        tape.backward(loss);
        analytic = tape.grad(xv);
    }
    auto eval = [&fn](const Tensor& at) {
        Tape tape;
        Var xv = tape.leaf(at, false);
        const double v = fn(tape, xv).value().item();
        return Eval{v, relu_pattern(tape)};
    };
    GradCheckResult r;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const Eval fp = eval(probe);
        probe[i] = orig - h;
        const Eval fm = eval(probe);
        probe[i] = orig;
        consider(r, i, "", analytic[i], (fp.value - fm.value) / (2.0 * h), fp.pattern != fm.pattern);
    }
    return r;
}

GradCheckResult finite_diff_check(const StoreLossFn& fn, ParamStore& store, double h) {
    require(h > 0.0, ErrorKind::InvalidArgument, "finite_diff_check: step must be positive");
    std::map<std::string, Tensor> analytic;
    {
        Tape tape;
        ParamBinding bind(tape, store);
        Var loss = fn(tape, bind);
        tape.backward(loss);
        for (const auto& name : store.names()) analytic[name] = tape.grad(bind[name]);
    }
    auto eval = [&fn, &store]() {
        Tape tape;
        ParamBinding bind(tape, store, false);
        const double v = fn(tape, bind).value().item();
        return Eval{v, relu_pattern(tape)};
    };
    GradCheckResult r;
    for (const auto& name : store.names()) {
        Tensor& value = store.at(name).value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            value[i] = orig + h;
            const Eval fp = eval();
            value[i] = orig - h;
            const Eval fm = eval();
            value[i] = orig;
            consider(r, i, name, analytic[name][i], (fp.value - fm.value) / (2.0 * h), fp.pattern != fm.pattern);
        }
    }
    return r;
}

}  // namespace dfl
