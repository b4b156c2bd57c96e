#include "fewseg/analysis.hpp"

#include "fewseg/common.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fewseg {

std::vector<ObjectFeature> extract_object_features(const Model& model,
                                                   const std::vector<Episode>& episodes,
                                                   Split split, bool use_adapters) {
    std::vector<ObjectFeature> out;
    int skipped = 0;
    const int p = model.cfg.patch_size;
    const AdapterSet* adapters = use_adapters ? &model.adapters : nullptr;
    for (const auto& ep : episodes) {
        for (const auto& s : ep.samples) {
            auto fm = encode_image(model.encoder, s.image, adapters);
            const auto& tokens = fm.grid();
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(tokens.cols());
            int covered = 0;
            for (int ty = 0; ty < fm.h; ++ty)
                for (int tx = 0; tx < fm.w; ++tx) {
                    int fgcount = 0;
                    for (int py = 0; py < p; ++py)
                        for (int px = 0; px < p; ++px)
                            if (s.mask.at(ty * p + py, tx * p + px)) ++fgcount;
                    if (2 * fgcount >= p * p) { // >= 50% covered
                        acc += tokens.row(static_cast<long>(ty) * fm.w + tx).transpose();
                        ++covered;
                    }
                }
            if (covered == 0) {
                ++skipped;
                continue;
            }
            ObjectFeature f;
            f.vector = acc / covered;
            f.class_id = ep.class_id.id();
            f.split = split;
            out.push_back(std::move(f));
        }
    }
    if (skipped > 0)
        std::cerr << "warning: skipped " << skipped
                  << " instance(s) whose mask covers no token\n";
    return out;
}

PCAModel pca_fit(const std::vector<Eigen::VectorXd>& features) {
    if (features.size() < 2) throw InputError("pca_fit: need at least 2 samples");
    const long n = static_cast<long>(features.size());
    const long d = features[0].size();
    nn::Mat X(n, d);
    for (long i = 0; i < n; ++i) X.row(i) = features[static_cast<std::size_t>(i)].transpose();
    PCAModel m;
    m.mean = X.colwise().mean().transpose();
    nn::Mat C = X.rowwise() - m.mean.transpose();
    Eigen::JacobiSVD<nn::Mat> svd(C, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const long r = std::min<long>(sv.size(), d);
    m.components.resize(r, d);
    m.explained_ratio.resize(r);
    double total = 0.0;
    for (long i = 0; i < sv.size(); ++i) total += sv(i) * sv(i);
    for (long i = 0; i < r; ++i) {
        Eigen::VectorXd v = svd.matrixV().col(i);
        // deterministic sign: largest-magnitude entry positive
        long arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        m.components.row(i) = v.transpose();
        m.explained_ratio(i) = total > 0 ? sv(i) * sv(i) / total : 0.0;
    }
    return m;
}

nn::Mat pca_project(const PCAModel& model, const std::vector<Eigen::VectorXd>& features,
                    int n_components) {
    const long d = model.mean.size();
    if (n_components <= 0 || n_components > d)
        throw InputError("pca_project: n_components out of range");
    const long avail = std::min<long>(n_components, model.components.rows());
    nn::Mat out = nn::Mat::Zero(static_cast<long>(features.size()), n_components);
    for (std::size_t i = 0; i < features.size(); ++i) {
        Eigen::VectorXd c = features[i] - model.mean;
        out.block(static_cast<long>(i), 0, 1, avail) =
            (model.components.topRows(avail) * c).transpose();
    }
    return out;
}

namespace {

double sq_dist(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return (a - b).squaredNorm();
}

KMeansResult kmeans_once(const nn::Mat& X, int k, Rng& rng) {
    const long n = X.rows();
    nn::Mat centroids(k, X.cols());
    // k-means++ seeding
    std::vector<double> d2(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
    long first = static_cast<long>(rng.next_below(static_cast<std::uint64_t>(n)));
    centroids.row(0) = X.row(first);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (long i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] = std::min(
                d2[static_cast<std::size_t>(i)], sq_dist(X.row(i), centroids.row(c - 1)));
            total += d2[static_cast<std::size_t>(i)];
        }
        long pick = 0;
        if (total > 0) {
            const double r = rng.next_double() * total;
            double acc = 0.0;
            for (long i = 0; i < n; ++i) {
                acc += d2[static_cast<std::size_t>(i)];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<long>(rng.next_below(static_cast<std::uint64_t>(n)));
        }
        centroids.row(c) = X.row(pick);
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (long i = 0; i < n; ++i) {
            int best = 0;
            double bestd = sq_dist(X.row(i), centroids.row(0));
            for (int c = 1; c < k; ++c) {
                const double dd = sq_dist(X.row(i), centroids.row(c));
                if (dd < bestd) {
                    bestd = dd;
                    best = c;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        nn::Mat sums = nn::Mat::Zero(k, X.cols());
        std::vector<long> counts(static_cast<std::size_t>(k), 0);
        for (long i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) =
                    sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            } else {
                // re-seed empty cluster at the point farthest from its centroid
                long far = 0;
                double fard = -1.0;
                for (long i = 0; i < n; ++i) {
                    const double dd =
                        sq_dist(X.row(i), centroids.row(assign[static_cast<std::size_t>(i)]));
                    if (dd > fard) {
                        fard = dd;
                        far = i;
                    }
                }
                centroids.row(c) = X.row(far);
            }
        }
    }
    KMeansResult res;
    res.centroids = centroids;
    res.assignments = assign;
    res.inertia = 0.0;
    for (long i = 0; i < n; ++i)
        res.inertia += sq_dist(X.row(i), centroids.row(assign[static_cast<std::size_t>(i)]));
    return res;
}

} // namespace

KMeansResult kmeans(const nn::Mat& points, int k, std::uint64_t seed, int restarts) {
    if (points.rows() < k) throw InputError("kmeans: fewer points than clusters");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, 0x83A0 + static_cast<std::uint64_t>(r)));
        auto res = kmeans_once(points, k, rng);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

namespace {

double assignment_accuracy_reduced(const nn::Mat& Xtr, const std::vector<int>& ytr,
                                   const nn::Mat& Xte, const std::vector<int>& yte,
                                   std::uint64_t seed) {
    std::set<int> classes(ytr.begin(), ytr.end());
    const int k = static_cast<int>(classes.size());
    auto km = kmeans(Xtr, k, seed);

    // majority-vote cluster -> class mapping; ties go to the lowest class id
    std::vector<std::map<int, int>> votes(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < ytr.size(); ++i)
        ++votes[static_cast<std::size_t>(km.assignments[i])][ytr[i]];
    std::vector<int> cluster_class(static_cast<std::size_t>(k), *classes.begin());
    for (int c = 0; c < k; ++c) {
        int best_class = *classes.begin(), best_count = -1;
        for (const auto& [cls, cnt] : votes[static_cast<std::size_t>(c)])
            if (cnt > best_count || (cnt == best_count && cls < best_class)) {
                best_count = cnt;
                best_class = cls;
            }
        cluster_class[static_cast<std::size_t>(c)] = best_class;
    }

    std::map<int, std::pair<int, int>> per_class; // class -> (correct, total)
    for (long i = 0; i < Xte.rows(); ++i) {
        int best = 0;
        double bestd = (Xte.row(i) - km.centroids.row(0)).squaredNorm();
        for (int c = 1; c < k; ++c) {
            const double dd = (Xte.row(i) - km.centroids.row(c)).squaredNorm();
            if (dd < bestd) {
                bestd = dd;
                best = c;
            }
        }
        auto& pc = per_class[yte[static_cast<std::size_t>(i)]];
        if (cluster_class[static_cast<std::size_t>(best)] == yte[static_cast<std::size_t>(i)])
            ++pc.first;
        ++pc.second;
    }
    double acc = 0.0;
    for (const auto& [cls, p] : per_class)
        acc += static_cast<double>(p.first) / p.second;
    return acc / static_cast<double>(per_class.size());
}

} // namespace

double centroid_assignment_accuracy(const std::vector<ObjectFeature>& train_feats,
                                    const std::vector<ObjectFeature>& test_feats,
                                    int n_components, std::uint64_t seed) {
    if (train_feats.empty() || test_feats.empty())
        throw InputError("centroid assignment: empty split");
    std::set<int> train_classes;
    for (const auto& f : train_feats) train_classes.insert(f.class_id);
    for (const auto& f : test_feats)
        if (!train_classes.count(f.class_id))
            throw InputError("centroid assignment: test class missing from train split");

    const long d = train_feats[0].vector.size();
    if (n_components > d) throw InputError("centroid assignment: n_components > d");

    std::vector<int> ytr, yte;
    for (const auto& f : train_feats) ytr.push_back(f.class_id);
    for (const auto& f : test_feats) yte.push_back(f.class_id);

    nn::Mat Xtr, Xte;
    const bool reduce = n_components > 0 && n_components < d;
    if (reduce) {
        std::vector<Eigen::VectorXd> tr, te;
        for (const auto& f : train_feats) tr.push_back(f.vector);
        for (const auto& f : test_feats) te.push_back(f.vector);
        auto pca = pca_fit(tr);
        Xtr = pca_project(pca, tr, n_components);
        Xte = pca_project(pca, te, n_components);
    } else {
        // n = d or no reduction requested: a full orthonormal basis is an
        // isometry on the data span, so skip the rotation entirely
        Xtr.resize(static_cast<long>(train_feats.size()), d);
        Xte.resize(static_cast<long>(test_feats.size()), d);
        for (std::size_t i = 0; i < train_feats.size(); ++i)
            Xtr.row(static_cast<long>(i)) = train_feats[i].vector.transpose();
        for (std::size_t i = 0; i < test_feats.size(); ++i)
            Xte.row(static_cast<long>(i)) = test_feats[i].vector.transpose();
    }
    return assignment_accuracy_reduced(Xtr, ytr, Xte, yte, seed);
}

std::vector<SweepPoint> pca_sweep(const std::vector<ObjectFeature>& train_feats,
                                  const std::vector<ObjectFeature>& test_feats,
                                  const std::vector<int>& component_grid,
                                  std::uint64_t seed) {
    const double full = centroid_assignment_accuracy(train_feats, test_feats, -1, seed);
    if (full == 0.0)
        throw NormalizationError("pca_sweep: full-space accuracy is zero");
    std::vector<SweepPoint> out;
    for (int n : component_grid) {
        const double acc = centroid_assignment_accuracy(train_feats, test_feats, n, seed);
        out.push_back({n, acc / full});
    }
    return out;
}

void write_sweep_csv(const std::vector<SweepPoint>& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write sweep: " + path);
    f << "n_components,relative_accuracy\n";
    f.precision(10);
    for (const auto& p : curve) f << p.n_components << "," << p.relative_accuracy << "\n";
}

namespace {

struct TokenDataset {
    nn::Mat features;           // tokens x d
    std::vector<std::vector<long>> label_counts; // per token, size n_labels
    std::vector<int> label_ids; // label column -> class id (0 = background)
};

TokenDataset build_token_dataset(const Model& model, const std::vector<Episode>& eps,
                                 const std::vector<int>& label_ids, bool use_adapters) {
    const int p = model.cfg.patch_size;
    const AdapterSet* adapters = use_adapters ? &model.adapters : nullptr;
    std::map<int, int> label_col;
    for (std::size_t i = 0; i < label_ids.size(); ++i)
        label_col[label_ids[i]] = static_cast<int>(i);

    TokenDataset ds;
    ds.label_ids = label_ids;
    std::vector<Eigen::RowVectorXd> rows;
    for (const auto& ep : eps) {
        const int cls_col = label_col.at(ep.class_id.id());
        for (const auto& s : ep.samples) {
            auto fm = encode_image(model.encoder, s.image, adapters);
            const auto& tokens = fm.grid();
            for (int ty = 0; ty < fm.h; ++ty)
                for (int tx = 0; tx < fm.w; ++tx) {
                    rows.push_back(tokens.row(static_cast<long>(ty) * fm.w + tx));
                    std::vector<long> counts(label_ids.size(), 0);
                    for (int py = 0; py < p; ++py)
                        for (int px = 0; px < p; ++px) {
                            const bool fg = s.mask.at(ty * p + py, tx * p + px) != 0;
                            ++counts[static_cast<std::size_t>(fg ? cls_col : 0)];
                        }
                    ds.label_counts.push_back(std::move(counts));
                }
        }
    }
    ds.features.resize(static_cast<long>(rows.size()), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) ds.features.row(static_cast<long>(i)) = rows[i];
    return ds;
}

} // namespace

LinearProbeResult linear_probe(const Model& model,
                               const std::vector<Episode>& train_set,
                               const std::vector<Episode>& test_set,
                               bool use_adapters, int steps, double lr) {
    if (train_set.empty() || test_set.empty())
        throw InputError("linear_probe: empty episode set");
    std::set<int> train_classes, test_classes;
    for (const auto& ep : train_set) train_classes.insert(ep.class_id.id());
    for (const auto& ep : test_set) test_classes.insert(ep.class_id.id());
    for (int c : test_classes)
        if (!train_classes.count(c))
            throw InputError("linear_probe: test class absent from train set");

    // label column 0 is background (sentinel id -1), then one per class
    std::vector<int> probe_labels = {-1};
    for (int c : train_classes) probe_labels.push_back(c);

    auto tr = build_token_dataset(model, train_set, probe_labels, use_adapters);
    auto te = build_token_dataset(model, test_set, probe_labels, use_adapters);

    // standardize with train statistics so the probe's conditioning does not
    // depend on the feature scale of the model under test
    Eigen::RowVectorXd mu = tr.features.colwise().mean();
    Eigen::RowVectorXd sd =
        ((tr.features.rowwise() - mu).array().square().colwise().mean() + 1e-12)
            .sqrt();
    tr.features = (tr.features.rowwise() - mu).array().rowwise() / sd.array();
    te.features = (te.features.rowwise() - mu).array().rowwise() / sd.array();

    const long d = tr.features.cols();
    const long C = static_cast<long>(probe_labels.size());
    nn::Mat W = nn::Mat::Zero(d, C);
    nn::Mat b = nn::Mat::Zero(1, C);

    // weighted softmax regression; token weight = pixel count per label
    nn::Mat T(tr.features.rows(), C);
    for (long i = 0; i < T.rows(); ++i)
        for (long c = 0; c < C; ++c)
            T(i, c) = static_cast<double>(tr.label_counts[static_cast<std::size_t>(i)]
                                                         [static_cast<std::size_t>(c)]);
    const double total_weight = T.sum();
    nn::Adam opt(lr);
    for (int s = 0; s < steps; ++s) {
        nn::Mat logits = tr.features * W;
        logits.rowwise() += b.row(0);
        nn::Mat probs(logits.rows(), C);
        for (long i = 0; i < logits.rows(); ++i) {
            const double mx = logits.row(i).maxCoeff();
            Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
            probs.row(i) = e / e.sum();
        }
        const double row_w = static_cast<double>(model.cfg.patch_size) *
                             model.cfg.patch_size; // pixels per token
        nn::Mat dlogits = (probs * row_w - T) / total_weight;
        nn::Mat dW = tr.features.transpose() * dlogits;
        nn::Mat db = dlogits.colwise().sum();
        std::vector<nn::Mat*> params = {&W, &b};
        std::vector<const nn::Mat*> grads = {&dW, &db};
        opt.step(params, grads);
    }

    // evaluate: argmax per test token, scored at pixel granularity
    std::vector<double> inter(static_cast<std::size_t>(C), 0.0),
        uni(static_cast<std::size_t>(C), 0.0);
    nn::Mat logits = te.features * W;
    logits.rowwise() += b.row(0);
    for (long i = 0; i < logits.rows(); ++i) {
        long pred = 0;
        logits.row(i).maxCoeff(&pred);
        for (long c = 0; c < C; ++c) {
            const double gt_pixels =
                static_cast<double>(te.label_counts[static_cast<std::size_t>(i)]
                                                   [static_cast<std::size_t>(c)]);
            const double pred_pixels =
                pred == c ? static_cast<double>(model.cfg.patch_size) *
                                model.cfg.patch_size
                          : 0.0;
            inter[static_cast<std::size_t>(c)] += std::min(gt_pixels, pred_pixels);
            uni[static_cast<std::size_t>(c)] += std::max(gt_pixels, pred_pixels);
        }
    }
    LinearProbeResult res;
    double acc = 0.0;
    int counted = 0;
    for (long c = 1; c < C; ++c) { // object classes only
        if (uni[static_cast<std::size_t>(c)] == 0.0) continue;
        const double iou = inter[static_cast<std::size_t>(c)] / uni[static_cast<std::size_t>(c)];
        res.per_class_iou.push_back(iou);
        res.class_ids.push_back(probe_labels[static_cast<std::size_t>(c)]);
        acc += iou;
        ++counted;
    }
    res.miou = counted > 0 ? acc / counted : 0.0;
    return res;
}

double compute_iou(const Mask& pred, const Mask& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("compute_iou: shape mismatch");
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const bool a = pred.v[i] != 0, b = gt.v[i] != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    if (uni == 0) return 1.0; // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double compute_miou(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
    if (preds.size() != gts.size()) throw ShapeError("compute_miou: list size mismatch");
    if (preds.empty()) throw InputError("compute_miou: empty inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += compute_iou(preds[i], gts[i]);
    return acc / static_cast<double>(preds.size());
}

void pca_rgb_export(const std::vector<nn::Mat>& features_per_token, int grid_h,
                    int grid_w, int out_size, const std::string& path_prefix) {
    if (features_per_token.empty()) throw InputError("pca_rgb_export: no features");
    const long d = features_per_token[0].cols();
    if (d < 3) throw InputError("pca_rgb_export: need at least 3 feature dims");

    std::vector<Eigen::VectorXd> all;
    for (const auto& m : features_per_token) {
        if (m.rows() != static_cast<long>(grid_h) * grid_w || m.cols() != d)
            throw ShapeError("pca_rgb_export: token grid shape mismatch");
        for (long i = 0; i < m.rows(); ++i) all.push_back(m.row(i).transpose());
    }

    // joint PCA; degenerate (constant) data maps every channel to mid-gray
    nn::Mat proj(static_cast<long>(all.size()), 3);
    bool degenerate = false;
    try {
        auto pca = pca_fit(all);
        if (pca.components.rows() < 3) degenerate = true;
        else proj = pca_project(pca, all, 3);
    } catch (const InputError&) {
        degenerate = true;
    }

    const int scale = out_size / std::max(grid_h, 1);
    for (std::size_t img = 0; img < features_per_token.size(); ++img) {
        Image out(out_size, out_size, 0.5);
        if (!degenerate) {
            for (int c = 0; c < 3; ++c) {
                const double lo = proj.col(c).minCoeff();
                const double hi = proj.col(c).maxCoeff();
                const double range = hi - lo;
                for (int ty = 0; ty < grid_h; ++ty)
                    for (int tx = 0; tx < grid_w; ++tx) {
                        const long row = static_cast<long>(img) * grid_h * grid_w +
                                         static_cast<long>(ty) * grid_w + tx;
                        const double v =
                            range > 0 ? (proj(row, c) - lo) / range : 0.5;
                        for (int py = 0; py < scale; ++py)
                            for (int px = 0; px < scale; ++px)
                                out.at(ty * scale + py, tx * scale + px, c) = v;
                    }
            }
        }
        write_png_rgb(path_prefix + std::to_string(img) + ".png", out);
    }
}

} // namespace fewseg
