#pragma once

#include <string>
#include <vector>

#include "molembed/rng.hpp"
#include "molembed/tensor.hpp"

namespace molembed::nn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Named parameter set with deterministic initialization and a flat binary
/// checkpoint format (little-endian float64 + JSON manifest {name, shape,
/// offset}).
class ParamStore {
public:
    /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in defaults to the
    /// leading dimension (product of all but the last for conv kernels).
    int add(const std::string& name, std::vector<int> shape, Rng& rng, int fan_in = -1);
    int add_zeros(const std::string& name, std::vector<int> shape);

    Parameter& at(int i) { return params_[i]; }
    const Parameter& at(int i) const { return params_[i]; }
    Parameter* find(const std::string& name);
    size_t size() const { return params_.size(); }
    int64_t total_elements() const;

    void zero_grad();
    bool grads_finite() const;
    /// Scales all gradients so the global L2 norm is at most max_norm.
    /// Returns the pre-clip norm. Throws NonFiniteGradient on NaN/inf.
    double clip_global_norm(double max_norm);

    void save(const std::string& bin_path, const std::string& manifest_path) const;
    void load(const std::string& bin_path, const std::string& manifest_path);

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }

private:
    std::vector<Parameter> params_;
};

struct AdamState {
    int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void init(const ParamStore& params);
};

/// One Adam update with bias correction; deterministic given inputs.
void adam_step(ParamStore& params, AdamState& state);

}  // namespace molembed::nn
