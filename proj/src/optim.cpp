#include "molembed/optim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "molembed/errors.hpp"

namespace molembed::nn {

int ParamStore::add(const std::string& name, std::vector<int> shape, Rng& rng, int fan_in) {
    Tensor value(shape);
    if (fan_in <= 0) {
        fan_in = 1;
        for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
        if (shape.size() == 1) fan_in = shape[0];
    }
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : value.data) x = rng.uniform(-bound, bound);
    params_.push_back({name, std::move(value), Tensor(shape)});
    return static_cast<int>(params_.size()) - 1;
}

int ParamStore::add_zeros(const std::string& name, std::vector<int> shape) {
    params_.push_back({name, Tensor(shape), Tensor(shape)});
    return static_cast<int>(params_.size()) - 1;
}

Parameter* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

bool ParamStore::grads_finite() const {
    for (const auto& p : params_)
        if (!p.grad.finite()) return false;
    return true;
}

double ParamStore::clip_global_norm(double max_norm) {
    double ss = 0.0;
    for (const auto& p : params_)
        for (double g : p.grad.data) ss += g * g;
    if (!std::isfinite(ss)) throw NonFiniteGradient("global gradient norm is not finite");
    double norm = std::sqrt(ss);
    if (norm > max_norm && norm > 0.0) {
        double scale = max_norm / norm;
        for (auto& p : params_)
            for (double& g : p.grad.data) g *= scale;
    }
    return norm;
}

void ParamStore::save(const std::string& bin_path, const std::string& manifest_path) const {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot write checkpoint: " + bin_path);
    nlohmann::json manifest = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& p : params_) {
        // assumes little-endian host (x86/aarch64); format pinned as LE float64
        bin.write(reinterpret_cast<const char*>(p.value.data.data()),
                  static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
        manifest.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
        offset += p.value.numel();
    }
    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot write manifest: " + manifest_path);
    mf << manifest.dump(2) << "\n";
}

void ParamStore::load(const std::string& bin_path, const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot read manifest: " + manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(mf);
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot read checkpoint: " + bin_path);
    params_.clear();
    for (const auto& entry : manifest) {
        Parameter p;
        p.name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::vector<int>>();
        p.value = Tensor(shape);
        p.grad = Tensor(shape);
        bin.seekg(entry.at("offset").get<int64_t>() * static_cast<int64_t>(sizeof(double)));
        bin.read(reinterpret_cast<char*>(p.value.data.data()),
                 static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
        if (!bin) throw Error("checkpoint truncated: " + bin_path);
        params_.push_back(std::move(p));
    }
}

void AdamState::init(const ParamStore& params) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& p : params.all()) {
        m.emplace_back(p.value.shape);
        v.emplace_back(p.value.shape);
    }
}

void adam_step(ParamStore& params, AdamState& state) {
    if (state.m.size() != params.size()) throw ShapeError("AdamState not initialized for store");
    if (!params.grads_finite()) throw NonFiniteGradient("gradient contains NaN/inf");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        Parameter& p = params.at(static_cast<int>(k));
        auto& mk = state.m[k].data;
        auto& vk = state.v[k].data;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            double g = p.grad.data[i];
            mk[i] = state.beta1 * mk[i] + (1.0 - state.beta1) * g;
            vk[i] = state.beta2 * vk[i] + (1.0 - state.beta2) * g * g;
            double mhat = mk[i] / bc1;
            double vhat = vk[i] / bc2;
            p.value.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace molembed::nn
