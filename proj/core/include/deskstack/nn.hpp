// Copyright 2026 The deskstack Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DESKSTACK_NN_HPP
#define DESKSTACK_NN_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "deskstack/common.hpp"

namespace desk::nn {

// Dense layer with row-major weights. The scalar type is a template so the
// same forward/backward code runs as a 64-bit replica in gradient checks;
// gradients always accumulate in double.
template <typename T>
struct Linear {
    int in = 0, out = 0;
    std::vector<T> w;  // out x in, row-major
    std::vector<T> b;

    void init(int in_dim, int out_dim, Rng& rng, double scale) {
        in = in_dim;
        out = out_dim;
        w.resize(static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
        b.assign(static_cast<std::size_t>(out), T(0));
        for (auto& v : w) v = static_cast<T>(rng.normal() * scale);
    }

    void forward(std::span<const T> x, std::span<T> y) const {
        for (int o = 0; o < out; ++o) {
            double acc = static_cast<double>(b[static_cast<std::size_t>(o)]);
            const T* row = w.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) {
                acc += static_cast<double>(row[i]) * static_cast<double>(x[static_cast<std::size_t>(i)]);
            }
            y[static_cast<std::size_t>(o)] = static_cast<T>(acc);
        }
    }

    // dx may be empty when the input gradient is not needed.
    void backward(std::span<const T> x, std::span<const double> dy,
                  std::span<double> dw, std::span<double> db,
                  std::span<double> dx) const {
        for (int o = 0; o < out; ++o) {
            const double g = dy[static_cast<std::size_t>(o)];
            db[static_cast<std::size_t>(o)] += g;
            const T* row = w.data() + static_cast<std::size_t>(o) * in;
            double* grow = dw.data() + static_cast<std::size_t>(o) * in;
            if (dx.empty()) {
                for (int i = 0; i < in; ++i) {
                    grow[i] += g * static_cast<double>(x[static_cast<std::size_t>(i)]);
                }
            } else {
                for (int i = 0; i < in; ++i) {
                    grow[i] += g * static_cast<double>(x[static_cast<std::size_t>(i)]);
                    dx[static_cast<std::size_t>(i)] += g * static_cast<double>(row[i]);
                }
            }
        }
    }

    std::size_t parameter_count() const { return w.size() + b.size(); }
};

template <typename T>
void tanh_forward(std::span<T> v) {
    for (auto& x : v) x = static_cast<T>(std::tanh(static_cast<double>(x)));
}

// dy in place: dy *= (1 - y^2) where y is the activated output.
template <typename T>
void tanh_backward(std::span<const T> y, std::span<double> dy) {
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double t = static_cast<double>(y[i]);
        dy[i] *= 1.0 - t * t;
    }
}

template <typename T>
void softmax(std::span<const T> logits, std::span<double> probs) {
    double mx = -1e300;
    for (const auto& v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(static_cast<double>(logits[i]) - mx);
        sum += probs[i];
    }
    for (auto& p : probs) p /= sum;
}

// Flat parameter/gradient views used by the optimizer and gradient checks.
struct ParamView {
    const char* name;
    float* data;
    std::size_t size;
};

struct GradBuffer {
    std::vector<std::vector<double>> slots;

    void match(std::span<const ParamView> params) {
        slots.clear();
        for (const auto& p : params) slots.emplace_back(p.size, 0.0);
    }
    void zero() {
        for (auto& s : slots) {
            std::fill(s.begin(), s.end(), 0.0);
        }
    }
};

// SGD with momentum; updates are computed in double and stored as float.
struct SgdMomentum {
    double lr = 0.01;
    double momentum = 0.9;
    std::vector<std::vector<double>> velocity;

    void step(std::span<const ParamView> params, const GradBuffer& grads) {
        if (velocity.size() != params.size()) {
            velocity.clear();
            for (const auto& p : params) velocity.emplace_back(p.size, 0.0);
        }
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& vel = velocity[k];
            const auto& g = grads.slots[k];
            float* data = params[k].data;
            for (std::size_t i = 0; i < params[k].size; ++i) {
                vel[i] = momentum * vel[i] - lr * g[i];
                data[i] = static_cast<float>(static_cast<double>(data[i]) + vel[i]);
            }
        }
    }
};

}  // namespace desk::nn

#endif  // DESKSTACK_NN_HPP
