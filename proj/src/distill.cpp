#include "legs4/distill.hpp"

#include "legs4/parallel.hpp"
#include "legs4/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>

namespace legs4 {

namespace {

struct Candidate {
    double dist2;
    int index;
    bool operator<(const Candidate& o) const { return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index); }
};

/// Minimal exact KD-tree over 3D points.
class KdTree {
public:
    explicit KdTree(const MatrixXfR& pts) : pts_(pts.cast<double>()) {
        order_.resize(static_cast<size_t>(pts.rows()));
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(order_.size());
        if (!order_.empty()) root_ = build(0, order_.size(), 0);
    }

    void query(const Eigen::Vector3d& q, size_t k, std::priority_queue<Candidate>& heap) const {
        if (root_ >= 0) search(root_, q, k, heap);
    }

private:
    struct Node {
        int point;
        int axis;
        int left = -1, right = -1;
    };

    int build(size_t lo, size_t hi, int depth) {
        if (lo >= hi) return -1;
        const int axis = depth % 3;
        const size_t mid = (lo + hi) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi, [&](int a, int b) {
            return pts_(a, axis) < pts_(b, axis) || (pts_(a, axis) == pts_(b, axis) && a < b);
        });
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({order_[mid], axis});
        const int l = build(lo, mid, depth + 1);
        const int r = build(mid + 1, hi, depth + 1);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    void search(int node, const Eigen::Vector3d& q, size_t k, std::priority_queue<Candidate>& heap) const {
        const Node& n = nodes_[node];
        const Candidate c{(pts_.row(n.point).transpose() - q).squaredNorm(), n.point};
        if (heap.size() < k) {
            heap.push(c);
        } else if (c < heap.top()) {
            heap.pop();
            heap.push(c);
        }
        const double diff = q[n.axis] - pts_(n.point, n.axis);
        const int near = diff < 0 ? n.left : n.right;
        const int far = diff < 0 ? n.right : n.left;
        if (near >= 0) search(near, q, k, heap);
        if (far >= 0 && (heap.size() < k || diff * diff <= heap.top().dist2)) search(far, q, k, heap);
    }

    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

} // namespace

NeighborGraph knn(const MatrixXfR& means, int k) {
    if (k < 1) throw Error("knn: k must be >= 1");
    if (means.cols() != 3) throw Error("knn: means must be M x 3");
    const Eigen::Index m = means.rows();
    NeighborGraph g;
    if (m == 0) return g;
    g.k = static_cast<int>(std::min<Eigen::Index>(k, m));
    g.indices.resize(static_cast<size_t>(m) * g.k);
    const KdTree tree(means);
    parallel_for(static_cast<size_t>(m), [&](size_t i) {
        std::priority_queue<Candidate> heap;
        const Eigen::Vector3d q = means.row(static_cast<Eigen::Index>(i)).transpose().cast<double>();
        tree.query(q, static_cast<size_t>(g.k), heap);
        std::vector<Candidate> found;
        while (!heap.empty()) {
            found.push_back(heap.top());
            heap.pop();
        }
        std::sort(found.begin(), found.end());
        // Self goes first even if a coincident point has a lower index.
        const auto self = std::find_if(found.begin(), found.end(), [&](const Candidate& c) {
            return c.index == static_cast<int>(i);
        });
        if (self != found.end()) {
            std::rotate(found.begin(), self, self + 1);
        } else {
            found.insert(found.begin(), Candidate{0.0, static_cast<int>(i)});
            found.pop_back();
        }
        for (int j = 0; j < g.k; ++j) g.indices[i * g.k + j] = found[j].index;
    });
    return g;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> attend(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& features,
    const NeighborGraph& graph) {
    const Eigen::Index m = features.rows();
    if (graph.size() != m) throw Error("attend: neighbor graph does not match feature count");
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(std::max<Eigen::Index>(1, features.cols())));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(m, features.cols());
    std::vector<Scalar> w(static_cast<size_t>(graph.k));
    for (Eigen::Index i = 0; i < m; ++i) {
        const int* nb = graph.row(i);
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (int j = 0; j < graph.k; ++j) {
            w[j] = features.row(i).dot(features.row(nb[j])) * inv_sqrt_d;
            mx = std::max(mx, w[j]);
        }
        Scalar sum = 0;
        for (int j = 0; j < graph.k; ++j) sum += (w[j] = std::exp(w[j] - mx));
        out.row(i).setZero();
        for (int j = 0; j < graph.k; ++j) out.row(i) += (w[j] / sum) * features.row(nb[j]);
    }
    return out;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> attend_backward(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& features,
    const NeighborGraph& graph,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& grad_out) {
    const Eigen::Index m = features.rows();
    if (graph.size() != m || grad_out.rows() != m || grad_out.cols() != features.cols())
        throw Error("attend_backward: dimension mismatch");
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(std::max<Eigen::Index>(1, features.cols())));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grad =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(m, features.cols());
    std::vector<Scalar> w(static_cast<size_t>(graph.k)), gw(static_cast<size_t>(graph.k));
    for (Eigen::Index i = 0; i < m; ++i) {
        const int* nb = graph.row(i);
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (int j = 0; j < graph.k; ++j) {
            w[j] = features.row(i).dot(features.row(nb[j])) * inv_sqrt_d;
            mx = std::max(mx, w[j]);
        }
        Scalar sum = 0;
        for (int j = 0; j < graph.k; ++j) sum += (w[j] = std::exp(w[j] - mx));
        Scalar weighted = 0;
        for (int j = 0; j < graph.k; ++j) {
            w[j] /= sum;
            gw[j] = grad_out.row(i).dot(features.row(nb[j]));
            weighted += w[j] * gw[j];
        }
        for (int j = 0; j < graph.k; ++j) {
            // value path
            grad.row(nb[j]) += w[j] * grad_out.row(i);
            // logit path: d logit_ij = w_ij (g.L_j - sum_k w_ik g.L_k)
            const Scalar dlogit = w[j] * (gw[j] - weighted) * inv_sqrt_d;
            grad.row(i) += dlogit * features.row(nb[j]);
            grad.row(nb[j]) += dlogit * features.row(i);
        }
    }
    return grad;
}

template MatrixXdR attend<double>(const MatrixXdR&, const NeighborGraph&);
template MatrixXfR attend<float>(const MatrixXfR&, const NeighborGraph&);
template MatrixXdR attend_backward<double>(const MatrixXdR&, const NeighborGraph&, const MatrixXdR&);
template MatrixXfR attend_backward<float>(const MatrixXfR&, const NeighborGraph&, const MatrixXfR&);

void DistillConfig::validate() const {
    if (k < 1) throw Error("distill: k must be >= 1");
    if (iterations < 0) throw Error("distill: iterations must be >= 0");
    if (!(lr > 0)) throw Error("distill: lr must be positive");
    if (pixel_subset < 1) throw Error("distill: pixel subset must be positive");
}

DistillProblem::DistillProblem(const GaussianFrame& frame, const std::vector<Camera>& cameras,
                               const std::vector<const FeatureMap*>& targets, const DistillConfig& cfg)
    : m_(frame.size()), attention_(cfg.attention) {
    cfg.validate();
    if (targets.size() != cameras.size()) throw Error("distill: target/view mismatch (need one target per camera)");
    if (targets.empty()) throw Error("distill: no views");
    d_ = static_cast<int>(targets.front()->data.cols());
    for (size_t v = 0; v < cameras.size(); ++v) {
        const FeatureMap* map = targets[v];
        if (!map) throw Error("distill: missing target for view " + cameras[v].id);
        if (map->width != cameras[v].width || map->height != cameras[v].height)
            throw Error("distill: target/view mismatch for view " + cameras[v].id + " (image size)");
        if (map->data.cols() != d_) throw Error("distill: targets disagree on feature dimension");
        if (static_cast<long>(map->width) * map->height > cfg.full_frame_limit) subsets_ = true;
        View view;
        view.ctx = render_with_features(frame, cameras[v], MatrixXfR(frame.size(), 0), 0, cfg.tile).contributors;
        view.target = map->data.cast<double>();
        std::vector<Eigen::Index> covered;
        const auto npix = static_cast<Eigen::Index>(view.ctx.offsets.size()) - 1;
        view.row_offsets.push_back(0);
        for (Eigen::Index p = 0; p < npix; ++p) {
            if (view.ctx.offsets[p] == view.ctx.offsets[p + 1]) {
                view.empty_loss += view.target.row(p).cwiseAbs().sum();
                continue;
            }
            covered.push_back(p);
            for (uint32_t k = view.ctx.offsets[p]; k < view.ctx.offsets[p + 1]; ++k) {
                view.cols.push_back(view.ctx.gaussian[k]);
                view.vals.push_back(view.ctx.weight[k]);
            }
            view.row_offsets.push_back(static_cast<uint32_t>(view.cols.size()));
        }
        view.covered_target.resize(static_cast<Eigen::Index>(covered.size()), d_);
        for (size_t i = 0; i < covered.size(); ++i) view.covered_target.row(static_cast<Eigen::Index>(i)) = view.target.row(covered[i]);
        views_.push_back(std::move(view));
    }
    subset_size_ = cfg.pixel_subset;
    if (attention_) graph_ = knn(frame.means, cfg.k);
}

Eigen::VectorXd DistillProblem::visibility() const {
    Eigen::VectorXd vis = Eigen::VectorXd::Zero(m_);
    for (const auto& v : views_)
        for (size_t k = 0; k < v.ctx.gaussian.size(); ++k) vis[v.ctx.gaussian[k]] += v.ctx.weight[k];
    return vis;
}

template <int D, typename ViewT>
double DistillProblem::l1_pass(const ViewT& v, const MatrixXdR& smoothed, MatrixXdR* grad, int d) {
    const int dim = D > 0 ? D : d;
    std::array<double, (D > 0 ? D : 1)> fixed_acc;
    std::vector<double> dyn_acc(D > 0 ? 0 : static_cast<size_t>(d));
    double* acc = D > 0 ? fixed_acc.data() : dyn_acc.data();
    const double* src = smoothed.data();
    double* g = grad ? grad->data() : nullptr;
    double loss = 0.0;
    const size_t rows = v.row_offsets.size() - 1;
    for (size_t p = 0; p < rows; ++p) {
        for (int c = 0; c < dim; ++c) acc[c] = 0.0;
        for (uint32_t k = v.row_offsets[p]; k < v.row_offsets[p + 1]; ++k) {
            const double w = v.vals[k];
            const double* row = src + static_cast<size_t>(v.cols[k]) * dim;
            for (int c = 0; c < dim; ++c) acc[c] += w * row[c];
        }
        const double* target = v.covered_target.data() + p * dim;
        for (int c = 0; c < dim; ++c) {
            const double r = acc[c] - target[c];
            loss += std::abs(r);
            acc[c] = static_cast<double>((r > 0) - (r < 0));  // subgradient: sign(0) = 0
        }
        if (!g) continue;
        for (uint32_t k = v.row_offsets[p]; k < v.row_offsets[p + 1]; ++k) {
            const double w = v.vals[k];
            double* row = g + static_cast<size_t>(v.cols[k]) * dim;
            for (int c = 0; c < dim; ++c) row[c] += w * acc[c];
        }
    }
    return loss;
}

double DistillProblem::loss_and_grad(const MatrixXdR& features, MatrixXdR* grad, Rng* subset_rng) const {
    if (features.rows() != m_ || features.cols() != d_) throw Error("distill: feature block has wrong shape");
    const MatrixXdR smoothed = attention_ ? attend(features, graph_) : features;
    MatrixXdR grad_smoothed;
    if (grad) grad_smoothed = MatrixXdR::Zero(m_, d_);
    double loss = 0.0;
    Eigen::RowVectorXd pix(d_);
    if (!(subsets_ && subset_rng)) {
        for (const auto& v : views_) {
            loss += v.empty_loss;
            switch (d_) {
            case 8: loss += l1_pass<8>(v, smoothed, grad ? &grad_smoothed : nullptr, d_); break;
            case 16: loss += l1_pass<16>(v, smoothed, grad ? &grad_smoothed : nullptr, d_); break;
            case 32: loss += l1_pass<32>(v, smoothed, grad ? &grad_smoothed : nullptr, d_); break;
            default: loss += l1_pass<0>(v, smoothed, grad ? &grad_smoothed : nullptr, d_); break;
            }
        }
        if (grad) *grad = attention_ ? attend_backward(features, graph_, grad_smoothed) : grad_smoothed;
        return loss;
    }
    for (const auto& v : views_) {
        const auto npix = static_cast<Eigen::Index>(v.ctx.offsets.size()) - 1;
        auto visit = [&](Eigen::Index p) {
            pix.setZero();
            for (uint32_t k = v.ctx.offsets[p]; k < v.ctx.offsets[p + 1]; ++k)
                pix += v.ctx.weight[k] * smoothed.row(v.ctx.gaussian[k]);
            const Eigen::RowVectorXd r = pix - v.target.row(p);
            loss += r.cwiseAbs().sum();
            if (grad) {
                // subgradient: sign(0) = 0
                const Eigen::RowVectorXd s = r.unaryExpr([](double x) { return double((x > 0) - (x < 0)); });
                for (uint32_t k = v.ctx.offsets[p]; k < v.ctx.offsets[p + 1]; ++k)
                    grad_smoothed.row(v.ctx.gaussian[k]) += v.ctx.weight[k] * s;
            }
        };
        for (int i = 0; i < subset_size_; ++i) visit(static_cast<Eigen::Index>(subset_rng->below(npix)));
    }
    if (grad) *grad = attention_ ? attend_backward(features, graph_, grad_smoothed) : grad_smoothed;
    return loss;
}

DistillResult distill_timestep(const DynamicScene& scene, int t, const std::vector<FeatureMap>& targets,
                               const DistillConfig& cfg) {
    if (t < 0 || t >= scene.T()) throw Error("distill: timestep " + std::to_string(t) + " out of range");
    std::vector<const FeatureMap*> per_view;
    for (const auto& cam : scene.cameras) {
        const FeatureMap* found = nullptr;
        for (const auto& m : targets)
            if (m.view == cam.id && m.t == t) found = &m;
        if (!found) throw Error("distill: missing target for view " + cam.id + " at t=" + std::to_string(t));
        per_view.push_back(found);
    }
    const auto& frame = scene.frames[static_cast<size_t>(t)];
    const DistillProblem problem(frame, scene.cameras, per_view, cfg);
    if (scene.d > 0 && problem.dim() != scene.d)
        throw Error("distill: targets have " + std::to_string(problem.dim()) + " channels, scene d=" +
                    std::to_string(scene.d));

    Rng rng(cfg.seed * 1000003ULL + static_cast<uint64_t>(t));
    MatrixXdR features = MatrixXdR::Zero(problem.num_gaussians(), problem.dim());
    if (cfg.init == FeatureInit::Gaussian)
        for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = cfg.init_sigma * rng.normal();

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam<double> opt(features.size(), acfg);
    DistillResult result;
    result.loss_trace.reserve(static_cast<size_t>(cfg.iterations) + 1);
    MatrixXdR grad;
    for (int it = 0; it < cfg.iterations; ++it) {
        const double loss = problem.loss_and_grad(features, &grad, &rng);
        if (!std::isfinite(loss)) throw Error("distill: loss NaN at t=" + std::to_string(t) + " iteration " + std::to_string(it));
        result.loss_trace.push_back(loss);
        Eigen::Map<Eigen::VectorXd> flat(features.data(), features.size());
        opt.step(flat, Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size()));
    }
    result.loss_trace.push_back(problem.loss_and_grad(features, nullptr, nullptr));
    result.latent = features.cast<float>();
    return result;
}

DistillReport distill_scene(const DynamicScene& scene, const std::vector<FeatureMap>& maps, const CodecParams* codec,
                            const DistillConfig& cfg) {
    cfg.validate();
    DistillReport report;
    report.scene = scene;
    const int d = codec ? codec->d : scene.d;
    report.scene.d = d;
    report.scene.manifest.attention = cfg.attention;
    report.scene.manifest.attention_k = cfg.k;
    for (auto& f : report.scene.frames) f.latent_features.reset();

    const auto T = static_cast<size_t>(scene.T());
    std::vector<std::optional<DistillResult>> results(T);
    std::vector<std::string> errors(T);
    parallel_for(T, [&](size_t t) {
        try {
            std::vector<FeatureMap> targets;
            for (const auto& m : maps) {
                if (m.t != static_cast<int>(t)) continue;
                FeatureMap latent = m;
                if (codec) latent.data = codec->encode(m.data);
                targets.push_back(std::move(latent));
            }
            results[t] = distill_timestep(report.scene, static_cast<int>(t), targets, cfg);
        } catch (const std::exception& e) {
            errors[t] = e.what();
        }
    });
    for (size_t t = 0; t < T; ++t) {
        if (results[t]) {
            report.scene.frames[t].latent_features = std::move(results[t]->latent);
            report.loss_traces[static_cast<int>(t)] = std::move(results[t]->loss_trace);
        } else {
            report.failures[static_cast<int>(t)] = errors[t];
        }
    }
    return report;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iteration,loss\n";
    out.precision(10);
    for (size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

} // namespace legs4
