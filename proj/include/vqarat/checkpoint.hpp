#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqarat/tensor.hpp"

namespace vqarat {

// Named parameter collection; the unit of checkpointing and optimization.
// Names are stable across runs so checkpoints can be diffed.
class ParamMap {
public:
    void add(const std::string& name, Tensor t) {
        if (by_name_.count(name)) throw std::invalid_argument("ParamMap: duplicate name " + name);
        by_name_.emplace(name, t);
        order_.push_back(name);
    }

    Tensor& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::out_of_range("ParamMap: no parameter " + name);
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::out_of_range("ParamMap: no parameter " + name);
        return it->second;
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (const auto& n : order_) out.push_back(by_name_.at(n));
        return out;
    }
    const std::vector<std::string>& names() const { return order_; }
    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [k, t] : by_name_) n += t.size();
        return n;
    }

    void merge(const ParamMap& other) {
        for (const auto& n : other.order_) add(n, other.by_name_.at(n));
    }

    // Deep copy of values (fresh leaves; gradients not copied).
    ParamMap clone() const {
        ParamMap out;
        for (const auto& n : order_) {
            const Tensor& t = by_name_.at(n);
            out.add(n, Tensor::leaf(t.shape(), t.data(), t.requires_grad()));
        }
        return out;
    }

    // Deep copy with requires_grad forced off; for frozen reference models.
    ParamMap clone_detached() const {
        ParamMap out;
        for (const auto& n : order_) {
            const Tensor& t = by_name_.at(n);
            out.add(n, Tensor::leaf(t.shape(), t.data(), false));
        }
        return out;
    }

    // Overwrites values in place from another map with identical layout.
    void copy_values_from(const ParamMap& src) {
        for (const auto& n : order_) {
            const Tensor& s = src.by_name_.at(n);
            Tensor& d = by_name_.at(n);
            if (s.shape() != d.shape()) throw std::invalid_argument("ParamMap: shape mismatch for " + n);
            d.data() = s.data();
        }
    }

    double max_abs_diff(const ParamMap& other) const {
        double worst = 0.0;
        for (const auto& n : order_) {
            const auto& a = by_name_.at(n).data();
            const auto& b = other.by_name_.at(n).data();
            if (a.size() != b.size()) throw std::invalid_argument("ParamMap: size mismatch for " + n);
            for (std::size_t i = 0; i < a.size(); ++i)
                worst = std::max(worst, std::fabs(a[i] - b[i]));
        }
        return worst;
    }

private:
    std::map<std::string, Tensor> by_name_;
    std::vector<std::string> order_;
};

// Checkpoint container: JSON document, parameter name -> {shape, data}.
inline void save_checkpoint(const ParamMap& params, const std::string& path) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& name : params.names()) {
        const Tensor& t = params.at(name);
        doc[name] = {{"shape", t.shape()}, {"data", t.data()}};
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << doc.dump() << "\n";
}

inline ParamMap load_checkpoint(const std::string& path, bool requires_grad = true) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json doc = nlohmann::json::parse(in);
    ParamMap params;
    for (auto& [name, entry] : doc.items()) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        params.add(name, Tensor::leaf(std::move(shape), std::move(data), requires_grad));
    }
    return params;
}

}  // namespace vqarat
