#include "caosd/nets.hpp"

#include <cmath>
#include <utility>

#include "caosd/errors.hpp"

namespace caosd {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightMap = Eigen::Map<const RowMajor>;
using WeightGradMap = Eigen::Map<RowMajor>;
using BiasMap = Eigen::Map<const Eigen::VectorXd>;
using BiasGradMap = Eigen::Map<Eigen::VectorXd>;

}  // namespace

Eigen::VectorXd Linear::forward(const Eigen::VectorXd& params, const Eigen::VectorXd& x) const {
    const WeightMap w(params.data() + offset, out, in);
    const BiasMap b(params.data() + offset + out * in, out);
    return w * x + b;
}

Eigen::VectorXd Linear::backward(const Eigen::VectorXd& params, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& dy, Eigen::VectorXd& grad) const {
    const WeightMap w(params.data() + offset, out, in);
    WeightGradMap dw(grad.data() + offset, out, in);
    BiasGradMap db(grad.data() + offset + out * in, out);
    dw.noalias() += dy * x.transpose();
    db += dy;
    return w.transpose() * dy;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& params, Eigen::VectorXd x,
                             Trace* trace) const {
    if (trace) trace->inputs.clear();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (trace) trace->inputs.push_back(x);
        x = layers[l].forward(params, x);
        if (l + 1 < layers.size()) x = x.cwiseMax(0.0);
    }
    return x;
}

Eigen::VectorXd Mlp::backward(const Eigen::VectorXd& params, const Trace& trace,
                              Eigen::VectorXd dy, Eigen::VectorXd& grad) const {
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (l + 1 < layers.size()) {
            // trace.inputs[l + 1] is this layer's post-ReLU output.
            const Eigen::VectorXd& activated = trace.inputs[l + 1];
            for (Eigen::Index i = 0; i < dy.size(); ++i) {
                if (activated(i) <= 0.0) dy(i) = 0.0;
            }
        }
        dy = layers[l].backward(params, trace.inputs[l], dy, grad);
    }
    return dy;
}

Eigen::MatrixXd SelfAttention::forward(const Eigen::VectorXd& params,
                                       const Eigen::MatrixXd& tokens, Trace* trace) const {
    const WeightMap q_w(params.data() + wq.offset, dim, dim);
    const BiasMap q_b(params.data() + wq.offset + dim * dim, dim);
    const WeightMap k_w(params.data() + wk.offset, dim, dim);
    const BiasMap k_b(params.data() + wk.offset + dim * dim, dim);
    const WeightMap v_w(params.data() + wv.offset, dim, dim);
    const BiasMap v_b(params.data() + wv.offset + dim * dim, dim);

    const Eigen::MatrixXd q = (tokens * q_w.transpose()).rowwise() + q_b.transpose();
    const Eigen::MatrixXd k = (tokens * k_w.transpose()).rowwise() + k_b.transpose();
    const Eigen::MatrixXd v = (tokens * v_w.transpose()).rowwise() + v_b.transpose();

    Eigen::MatrixXd p = q * k.transpose() / std::sqrt(static_cast<double>(dim));
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    if (trace) {
        trace->input = tokens;
        trace->q = q;
        trace->k = k;
        trace->v = v;
        trace->p = p;
    }
    return p * v;
}

Eigen::MatrixXd SelfAttention::backward(const Eigen::VectorXd& params, const Trace& trace,
                                        const Eigen::MatrixXd& d_out,
                                        Eigen::VectorXd& grad) const {
    const WeightMap q_w(params.data() + wq.offset, dim, dim);
    const WeightMap k_w(params.data() + wk.offset, dim, dim);
    const WeightMap v_w(params.data() + wv.offset, dim, dim);

    const Eigen::MatrixXd dv = trace.p.transpose() * d_out;
    const Eigen::MatrixXd dp = d_out * trace.v.transpose();

    Eigen::MatrixXd ds(dp.rows(), dp.cols());
    for (Eigen::Index r = 0; r < dp.rows(); ++r) {
        const double inner = dp.row(r).dot(trace.p.row(r));
        ds.row(r) = (dp.row(r).array() - inner).matrix().cwiseProduct(trace.p.row(r));
    }
    ds /= std::sqrt(static_cast<double>(dim));

    const Eigen::MatrixXd dq = ds * trace.k;
    const Eigen::MatrixXd dk = ds.transpose() * trace.q;

    WeightGradMap dq_w(grad.data() + wq.offset, dim, dim);
    BiasGradMap dq_b(grad.data() + wq.offset + dim * dim, dim);
    WeightGradMap dk_w(grad.data() + wk.offset, dim, dim);
    BiasGradMap dk_b(grad.data() + wk.offset + dim * dim, dim);
    WeightGradMap dv_w(grad.data() + wv.offset, dim, dim);
    BiasGradMap dv_b(grad.data() + wv.offset + dim * dim, dim);

    dq_w.noalias() += dq.transpose() * trace.input;
    dq_b += dq.colwise().sum().transpose();
    dk_w.noalias() += dk.transpose() * trace.input;
    dk_b += dk.colwise().sum().transpose();
    dv_w.noalias() += dv.transpose() * trace.input;
    dv_b += dv.colwise().sum().transpose();

    return dq * q_w + dk * k_w + dv * v_w;
}

Linear NetBuilder::linear(int in, int out) {
    if (in < 1 || out < 1) throw invalid_input("network layer sizes must be positive");
    Linear layer{in, out, next_};
    next_ += layer.param_count();
    return layer;
}

Mlp NetBuilder::mlp(int in, const std::vector<int>& hidden, int out) {
    Mlp net;
    int width = in;
    for (int h : hidden) {
        net.layers.push_back(linear(width, h));
        width = h;
    }
    net.layers.push_back(linear(width, out));
    return net;
}

SelfAttention NetBuilder::attention(int dim) {
    SelfAttention block;
    block.dim = dim;
    block.wq = linear(dim, dim);
    block.wk = linear(dim, dim);
    block.wv = linear(dim, dim);
    return block;
}

void init_linear(const Linear& layer, Eigen::VectorXd& params, Rng& rng, double weight_scale) {
    for (int i = 0; i < layer.out * layer.in; ++i) {
        params(layer.offset + i) = weight_scale * rng.normal();
    }
    for (int i = 0; i < layer.out; ++i) {
        params(layer.offset + layer.out * layer.in + i) = 0.0;
    }
}

void init_mlp(const Mlp& net, Eigen::VectorXd& params, Rng& rng) {
    for (const Linear& layer : net.layers) {
        init_linear(layer, params, rng, std::sqrt(2.0 / static_cast<double>(layer.in)));
    }
}

}  // namespace caosd
