// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "c2d/errors.hpp"
#include "c2d/rng.hpp"
#include "c2d/tensor.hpp"

namespace c2d {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

Tensor make(std::size_t rows, std::size_t cols, std::vector<double> value, const char* op,
            std::initializer_list<const Tensor*> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>(rows, cols, std::move(value), true);
    node->op = op;
    bool track = false;
    if (grad_enabled()) {
        for (const Tensor* p : parents) {
            track = track || p->requires_grad();
        }
    }
    if (track) {
        node->requires_grad = true;
        for (const Tensor* p : parents) {
            node->parents.push_back(p->ptr());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

Tensor make_many(std::size_t rows, std::size_t cols, std::vector<double> value, const char* op,
                 const std::vector<Tensor>& parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>(rows, cols, std::move(value), true);
    node->op = op;
    bool track = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            track = track || p.requires_grad();
        }
    }
    if (track) {
        node->requires_grad = true;
        for (const auto& p : parents) {
            node->parents.push_back(p.ptr());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

// Accumulates into parent i when it takes gradients.
template <class F>
void into(Node& self, std::size_t i, F&& f) {
    Node& p = *self.parents[i];
    if (p.requires_grad) {
        f(p.grad_buffer());
    }
}

template <class F>
Tensor unary(const Tensor& a, const char* op, F&& f, std::function<double(double x, double y)> dfdx) {
    std::vector<double> out(a.size());
    const auto v = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(v[i]);
    }
    return make(a.rows(), a.cols(), std::move(out), op, {&a}, [dfdx](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            const auto& x = self.parents[0]->value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * dfdx(x[i], self.value[i]);
            }
        });
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    const std::size_t n = a.rows();
    const std::size_t k = a.cols();
    const std::size_t m = transpose_b ? b.rows() : b.cols();
    require(k == (transpose_b ? b.cols() : b.rows()),
            "matmul: inner dimensions differ (" + dims(a) + (transpose_b ? " x T" : " x ") + dims(b) + ")");
    std::vector<double> out(n * m);
    Map c(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    MapC am(a.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    MapC bm(b.values().data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
    if (transpose_b) {
        c.noalias() = am * bm.transpose();
    } else {
        c.noalias() = am * bm;
    }
    compute_stats().macs += n * k * m;
    return make(n, m, std::move(out), "matmul", {&a, &b}, [n, k, m, transpose_b](Node& self) {
        const Node& pa = *self.parents[0];
        const Node& pb = *self.parents[1];
        MapC dc(self.grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        MapC am(pa.value.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
        MapC bm(pb.value.data(), static_cast<Eigen::Index>(pb.rows), static_cast<Eigen::Index>(pb.cols));
        into(self, 0, [&](std::vector<double>& g) {
            Map ga(g.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
            if (transpose_b) {
                ga.noalias() += dc * bm;
            } else {
                ga.noalias() += dc * bm.transpose();
            }
            compute_stats().macs += n * k * m;
        });
        into(self, 1, [&](std::vector<double>& g) {
            Map gb(g.data(), static_cast<Eigen::Index>(pb.rows), static_cast<Eigen::Index>(pb.cols));
            if (transpose_b) {
                gb.noalias() += dc.transpose() * am;
            } else {
                gb.noalias() += am.transpose() * dc;
            }
            compute_stats().macs += n * k * m;
        });
    });
}

Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(a.size());
    const auto v = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = v[i * c + j];
        }
    }
    return make(c, r, std::move(out), "transpose", {&a}, [r, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += self.grad[j * r + i];
                }
            }
        });
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "add");
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return make(a.rows(), a.cols(), std::move(out), "add", {&a, &b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            into(self, p, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            });
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "sub");
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bv[i];
    }
    return make(a.rows(), a.cols(), std::move(out), "sub", {&a, &b}, [](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
        into(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        });
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return make(a.rows(), a.cols(), std::move(out), "mul", {&a, &b}, [](Node& self) {
        const auto& x = self.parents[0]->value;
        const auto& y = self.parents[1]->value;
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * y[i];
            }
        });
        into(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * x[i];
            }
        });
    });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
    require(b.rows() == 1 && b.cols() == a.cols(), "add_row: expected 1x" + std::to_string(a.cols()) +
                                                        " row, got " + dims(b));
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] += bv[j];
        }
    }
    return make(r, c, std::move(out), "add_row", {&a, &b}, [r, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
        into(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[j] += self.grad[i * c + j];
                }
            }
        });
    });
}

Tensor outer_add(const Tensor& col, const Tensor& row) {
    require(col.cols() == 1 && row.rows() == 1, "outer_add: expected (n x 1) and (1 x m), got " + dims(col) +
                                                    " and " + dims(row));
    const std::size_t n = col.rows();
    const std::size_t m = row.cols();
    std::vector<double> out(n * m);
    const auto cv = col.values();
    const auto rv = row.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] = cv[i] + rv[j];
        }
    }
    return make(n, m, std::move(out), "outer_add", {&col, &row}, [n, m](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    g[i] += self.grad[i * m + j];
                }
            }
        });
        into(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    g[j] += self.grad[i * m + j];
                }
            }
        });
    });
}

Tensor scale_rows(const Tensor& a, const Tensor& w) {
    require(w.rows() == a.rows() && w.cols() == 1, "scale_rows: weight must be " + std::to_string(a.rows()) +
                                                       "x1, got " + dims(w));
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto wv = w.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = av[i * c + j] * wv[i];
        }
    }
    return make(r, c, std::move(out), "scale_rows", {&a, &w}, [r, c](Node& self) {
        const auto& x = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += self.grad[i * c + j] * wv[i];
                }
            }
        });
        into(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    s += self.grad[i * c + j] * x[i * c + j];
                }
                g[i] += s;
            }
        });
    });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
    require(s.size() == 1, "mul_scalar: expected a 1x1 factor, got " + dims(s));
    const double k = s.item();
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * k;
    }
    return make(a.rows(), a.cols(), std::move(out), "mul_scalar", {&a, &s}, [k](Node& self) {
        const auto& x = self.parents[0]->value;
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * k;
            }
        });
        into(self, 1, [&](std::vector<double>& g) {
            double acc = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                acc += self.grad[i] * x[i];
            }
            g[0] += acc;
        });
    });
}

Tensor scale(const Tensor& a, double k) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * k;
    }
    return make(a.rows(), a.cols(), std::move(out), "scale", {&a}, [k](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * k;
            }
        });
    });
}

Tensor add_const(const Tensor& a, double k) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& x : out) {
        x += k;
    }
    return make(a.rows(), a.cols(), std::move(out), "add_const", {&a}, [](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
    });
}

Tensor mul_const(const Tensor& a, std::vector<double> mask) {
    require(mask.size() == a.size(), "mul_const: mask size mismatch");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * mask[i];
    }
    return make(a.rows(), a.cols(), std::move(out), "mul_const", {&a}, [mask = std::move(mask)](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * mask[i];
            }
        });
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [inv_sqrt2pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Tensor relu(const Tensor& a) {
    return unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
    return unary(
        a, "softplus", [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) {
        s += x;
    }
    return make(1, 1, {s}, "sum", {&a}, [](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (double& x : g) {
                x += self.grad[0];
            }
        });
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.size());
    double s = 0.0;
    for (double x : a.values()) {
        s += x;
    }
    return make(1, 1, {s / n}, "mean", {&a}, [n](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (double& x : g) {
                x += self.grad[0] / n;
            }
        });
    });
}

Tensor mean_rows(const Tensor& a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(c, 0.0);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j] += av[i * c + j];
        }
    }
    for (double& x : out) {
        x /= static_cast<double>(r);
    }
    return make(1, c, std::move(out), "mean_rows", {&a}, [r, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += self.grad[j] / static_cast<double>(r);
                }
            }
        });
    });
}

Tensor row_sums(const Tensor& a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(r, 0.0);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i] += av[i * c + j];
        }
    }
    return make(r, 1, std::move(out), "row_sums", {&a}, [r, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += self.grad[i];
                }
            }
        });
    });
}

Tensor softmax_rows(const Tensor& a, bool causal) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(a.size(), 0.0);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t width = causal ? std::min(c, i + 1) : c;
        const double* x = av.data() + i * c;
        double* y = out.data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < width; ++j) {
            mx = std::max(mx, x[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < width; ++j) {
            y[j] /= z;
        }
    }
    return make(r, c, std::move(out), "softmax", {&a}, [r, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* dy = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    dot += dy[j] * y[j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += y[j] * (dy[j] - dot);
                }
            }
        });
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = av.data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) {
            mx = std::max(mx, x[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(x[j] - mx);
        }
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = x[j] - lse;
        }
    }
    return make(r, c, std::move(out), "log_softmax", {&a}, [r, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* dy = self.grad.data() + i * c;
                double total = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    total += dy[j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += dy[j] - std::exp(y[j]) * total;
                }
            }
        });
    });
}

Tensor row_normalize(const Tensor& a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(a.size(), 0.0);
    std::vector<double> sums(r, 0.0);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            sums[i] += av[i * c + j];
        }
        if (sums[i] != 0.0) {
            for (std::size_t j = 0; j < c; ++j) {
                out[i * c + j] = av[i * c + j] / sums[i];
            }
        }
    }
    return make(r, c, std::move(out), "row_normalize", {&a}, [r, c, sums = std::move(sums)](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                if (sums[i] == 0.0) {
                    continue;
                }
                const double* y = self.value.data() + i * c;
                const double* dy = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    dot += dy[j] * y[j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += (dy[j] - dot) / sums[i];
                }
            }
        });
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    require(gain.size() == c && bias.size() == c, "layer_norm: gain/bias width must be " + std::to_string(c));
    std::vector<double> xhat(a.size());
    std::vector<double> inv_std(r);
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            mu += av[i * c + j];
        }
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = av[i * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (av[i * c + j] - mu) * inv_std[i];
            out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
        }
    }
    return make(r, c, std::move(out), "layer_norm", {&a, &gain, &bias},
                [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                    const auto& gv = self.parents[1]->value;
                    into(self, 0, [&](std::vector<double>& g) {
                        for (std::size_t i = 0; i < r; ++i) {
                            double m1 = 0.0;
                            double m2 = 0.0;
                            for (std::size_t j = 0; j < c; ++j) {
                                const double dxh = self.grad[i * c + j] * gv[j];
                                m1 += dxh;
                                m2 += dxh * xhat[i * c + j];
                            }
                            m1 /= static_cast<double>(c);
                            m2 /= static_cast<double>(c);
                            for (std::size_t j = 0; j < c; ++j) {
                                const double dxh = self.grad[i * c + j] * gv[j];
                                g[i * c + j] += inv_std[i] * (dxh - m1 - xhat[i * c + j] * m2);
                            }
                        }
                    });
                    into(self, 1, [&](std::vector<double>& g) {
                        for (std::size_t i = 0; i < r; ++i) {
                            for (std::size_t j = 0; j < c; ++j) {
                                g[j] += self.grad[i * c + j] * xhat[i * c + j];
                            }
                        }
                    });
                    into(self, 2, [&](std::vector<double>& g) {
                        for (std::size_t i = 0; i < r; ++i) {
                            for (std::size_t j = 0; j < c; ++j) {
                                g[j] += self.grad[i * c + j];
                            }
                        }
                    });
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    require(begin < end && end <= a.rows(), "slice_rows: bad range [" + std::to_string(begin) + ", " +
                                                std::to_string(end) + ") for " + dims(a));
    const std::size_t c = a.cols();
    const auto av = a.values();
    std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * c),
                            av.begin() + static_cast<std::ptrdiff_t>(end * c));
    return make(end - begin, c, std::move(out), "slice_rows", {&a}, [begin, c](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[begin * c + i] += self.grad[i];
            }
        });
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require(begin < end && end <= a.cols(), "slice_cols: bad range [" + std::to_string(begin) + ", " +
                                                std::to_string(end) + ") for " + dims(a));
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    const std::size_t w = end - begin;
    std::vector<double> out(r * w);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(av.data() + i * c + begin, w, out.data() + i * w);
    }
    return make(r, w, std::move(out), "slice_cols", {&a}, [r, c, w, begin](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    g[i * c + begin + j] += self.grad[i * w + j];
                }
            }
        });
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        require(p.cols() == c, "concat_rows: column mismatch");
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return make_many(r, c, std::move(out), "concat_rows", parts, [](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t n = self.parents[p]->value.size();
            into(self, p, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] += self.grad[offset + i];
                }
            });
            offset += n;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        require(p.rows() == r, "concat_cols: row mismatch");
        c += p.cols();
    }
    std::vector<double> out(r * c);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < r; ++i) {
            std::copy_n(p.values().data() + i * w, w, out.data() + i * c + offset);
        }
        offset += w;
    }
    return make_many(r, c, std::move(out), "concat_cols", parts, [r, c](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t w = self.parents[p]->cols;
            into(self, p, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        g[i * w + j] += self.grad[i * c + offset + j];
                    }
                }
            });
            offset += w;
        }
    });
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
    require(!index.empty(), "gather_rows: empty index");
    const std::size_t c = a.cols();
    std::vector<double> out(index.size() * c);
    const auto av = a.values();
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] < a.rows(), "gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                                         dims(a));
        std::copy_n(av.data() + index[i] * c, c, out.data() + i * c);
    }
    const std::size_t n = index.size();
    return make(n, c, std::move(out), "gather_rows", {&a}, [c, index = std::move(index)](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < index.size(); ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[index[i] * c + j] += self.grad[i * c + j];
                }
            }
        });
    });
}

Tensor scatter_rows(const Tensor& a, std::vector<std::size_t> index, std::size_t rows_out) {
    require(index.size() == a.rows(), "scatter_rows: index length must equal row count");
    const std::size_t c = a.cols();
    std::vector<double> out(rows_out * c, 0.0);
    const auto av = a.values();
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] < rows_out, "scatter_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j) {
            out[index[i] * c + j] += av[i * c + j];
        }
    }
    return make(rows_out, c, std::move(out), "scatter_rows", {&a}, [c, index = std::move(index)](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < index.size(); ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[i * c + j] += self.grad[index[i] * c + j];
                }
            }
        });
    });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    require(rows * cols == a.size(), "reshape: element count changes");
    std::vector<double> out(a.values().begin(), a.values().end());
    return make(rows, cols, std::move(out), "reshape", {&a}, [](Node& self) {
        into(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
    });
}

Tensor dropout(const Tensor& a, double p, bool training, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout: rate must lie in [0, 1)");
    if (!training || p == 0.0) {
        return a;
    }
    std::vector<double> mask(a.size());
    const double keep = 1.0 / (1.0 - p);
    for (double& m : mask) {
        m = rng.uniform() < p ? 0.0 : keep;
    }
    return mul_const(a, std::move(mask));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore) {
    const std::size_t n = logits.rows();
    const std::size_t v = logits.cols();
    require(targets.size() == n, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                     std::to_string(n) + " rows");
    std::vector<double> probs(logits.size());
    const auto lv = logits.values();
    double loss = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = lv.data() + i * v;
        double mx = x[0];
        for (std::size_t j = 1; j < v; ++j) {
            mx = std::max(mx, x[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] = std::exp(x[j] - mx);
            z += probs[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] /= z;
        }
        if (targets[i] == ignore) {
            continue;
        }
        require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < v, "cross_entropy: target id out of range");
        loss -= x[targets[i]] - mx - std::log(z);
        ++counted;
    }
    const double denom = counted == 0 ? 1.0 : static_cast<double>(counted);
    return make(1, 1, {loss / denom}, "cross_entropy", {&logits},
                [n, v, denom, targets, ignore, probs = std::move(probs)](Node& self) {
                    into(self, 0, [&](std::vector<double>& g) {
                        const double s = self.grad[0] / denom;
                        for (std::size_t i = 0; i < n; ++i) {
                            if (targets[i] == ignore) {
                                continue;
                            }
                            for (std::size_t j = 0; j < v; ++j) {
                                g[i * v + j] += s * probs[i * v + j];
                            }
                            g[i * v + static_cast<std::size_t>(targets[i])] -= s;
                        }
                    });
                });
}

}  // namespace c2d
