#pragma once

#include <vector>

#include <Eigen/Dense>

#include "caosd/rng.hpp"

namespace caosd {

// Dense layer whose weights live in a shared flat parameter vector:
// row-major W (out x in) at `offset`, then the bias.
struct Linear {
    int in = 0;
    int out = 0;
    int offset = 0;

    int param_count() const { return out * (in + 1); }

    Eigen::VectorXd forward(const Eigen::VectorXd& params, const Eigen::VectorXd& x) const;
    // Accumulates dL/dW and dL/db into grad; returns dL/dx.
    Eigen::VectorXd backward(const Eigen::VectorXd& params, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& dy, Eigen::VectorXd& grad) const;
};

// Dense stack with ReLU between layers; the final layer stays linear.
struct Mlp {
    std::vector<Linear> layers;

    struct Trace {
        std::vector<Eigen::VectorXd> inputs;  // input seen by each layer
    };

    Eigen::VectorXd forward(const Eigen::VectorXd& params, Eigen::VectorXd x,
                            Trace* trace = nullptr) const;
    Eigen::VectorXd backward(const Eigen::VectorXd& params, const Trace& trace,
                             Eigen::VectorXd dy, Eigen::VectorXd& grad) const;
};

// Single-head scaled-dot-product self-attention over a fixed set of tokens.
// Query/key/value projections share the flat parameter vector.
struct SelfAttention {
    int dim = 0;
    Linear wq, wk, wv;

    struct Trace {
        Eigen::MatrixXd input;  // tokens x dim
        Eigen::MatrixXd q, k, v;
        Eigen::MatrixXd p;      // row-softmaxed scores
    };

    Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& tokens,
                            Trace* trace = nullptr) const;
    Eigen::MatrixXd backward(const Eigen::VectorXd& params, const Trace& trace,
                             const Eigen::MatrixXd& d_out, Eigen::VectorXd& grad) const;
};

// Assigns flat-vector offsets in construction order.
class NetBuilder {
public:
    Linear linear(int in, int out);
    Mlp mlp(int in, const std::vector<int>& hidden, int out);
    SelfAttention attention(int dim);
    int total() const { return next_; }

private:
    int next_ = 0;
};

// Gaussian weights at the given scale, zero biases.
void init_linear(const Linear& layer, Eigen::VectorXd& params, Rng& rng, double weight_scale);
// He-scaled initialization for every layer of the stack.
void init_mlp(const Mlp& net, Eigen::VectorXd& params, Rng& rng);

}  // namespace caosd
