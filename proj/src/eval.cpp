#include "instgs/eval.hpp"

#include "instgs/rasterizer.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace instgs {

namespace {

void check_aligned(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("prediction and GT view counts differ");
    for (std::size_t v = 0; v < pred.size(); ++v) {
        if (!pred[v].same_shape(gt[v]) || pred[v].channels != 1) {
            throw std::invalid_argument("view " + std::to_string(v) + ": prediction/GT shape mismatch");
        }
    }
}

std::size_t index_of(const std::vector<std::int32_t>& sorted, std::int32_t value) {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), value) - sorted.begin());
}

}  // namespace

double OverlapCounts::iou(std::size_t g, std::size_t p) const {
    const auto inter = intersection(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(p));
    const auto uni = gt_area[g] + pred_area[p] - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

OverlapCounts count_overlaps(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt) {
    check_aligned(pred, gt);
    std::set<std::int32_t> gt_set, pred_set;
    for (std::size_t v = 0; v < gt.size(); ++v) {
        for (std::int32_t g : gt[v].data) if (g != kBackground) gt_set.insert(g);
        for (std::int32_t p : pred[v].data) if (p != kBackground) pred_set.insert(p);
    }
    OverlapCounts c;
    c.gt_labels.assign(gt_set.begin(), gt_set.end());
    c.pred_ids.assign(pred_set.begin(), pred_set.end());
    c.intersection.setZero(static_cast<Eigen::Index>(c.gt_labels.size()),
                           static_cast<Eigen::Index>(c.pred_ids.size()));
    c.gt_area.assign(c.gt_labels.size(), 0);
    c.pred_area.assign(c.pred_ids.size(), 0);
    for (std::size_t v = 0; v < gt.size(); ++v) {
        for (std::size_t i = 0; i < gt[v].data.size(); ++i) {
            const std::int32_t g = gt[v].data[i];
            const std::int32_t p = pred[v].data[i];
            const std::size_t gi = g != kBackground ? index_of(c.gt_labels, g) : 0;
            const std::size_t pi = p != kBackground ? index_of(c.pred_ids, p) : 0;
            if (g != kBackground) ++c.gt_area[gi];
            if (p != kBackground) ++c.pred_area[pi];
            if (g != kBackground && p != kBackground) {
                ++c.intersection(static_cast<Eigen::Index>(gi), static_cast<Eigen::Index>(pi));
            }
        }
    }
    return c;
}

std::vector<int> hungarian_min_cost(const Eigen::MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    const int m = static_cast<int>(a.cols());
    if (n > m) throw std::invalid_argument("assignment needs rows <= cols");
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> out(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j) {
        if (p[j] != 0) out[static_cast<std::size_t>(p[j] - 1)] = j - 1;
    }
    return out;
}

Matching match_ids(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt) {
    const OverlapCounts c = count_overlaps(pred, gt);
    const std::size_t ng = c.gt_labels.size(), np = c.pred_ids.size();
    Matching m;
    for (std::int32_t g : c.gt_labels) m.gt_to_pred[g] = std::nullopt;
    if (ng == 0 || np == 0) return m;

    // Rows are the smaller side so the solver sees rows <= cols.
    const bool gt_rows = ng <= np;
    Eigen::MatrixXd cost(static_cast<Eigen::Index>(gt_rows ? ng : np),
                         static_cast<Eigen::Index>(gt_rows ? np : ng));
    for (std::size_t g = 0; g < ng; ++g) {
        for (std::size_t p = 0; p < np; ++p) {
            const auto r = static_cast<Eigen::Index>(gt_rows ? g : p);
            const auto col = static_cast<Eigen::Index>(gt_rows ? p : g);
            cost(r, col) = -c.iou(g, p);
        }
    }
    const std::vector<int> assign = hungarian_min_cost(cost);
    for (std::size_t r = 0; r < assign.size(); ++r) {
        const std::size_t g = gt_rows ? r : static_cast<std::size_t>(assign[r]);
        const std::size_t p = gt_rows ? static_cast<std::size_t>(assign[r]) : r;
        const double iou = c.iou(g, p);
        if (iou <= 0.0) continue;
        m.gt_to_pred[c.gt_labels[g]] = c.pred_ids[p];
        m.total_iou += iou;
    }
    return m;
}

SegmentationScores compute_miou_macc(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt,
                                     const Matching& matching) {
    const OverlapCounts c = count_overlaps(pred, gt);
    SegmentationScores s;
    for (std::size_t g = 0; g < c.gt_labels.size(); ++g) {
        LabelScore ls;
        ls.label = c.gt_labels[g];
        const auto it = matching.gt_to_pred.find(ls.label);
        if (it != matching.gt_to_pred.end() && it->second) {
            ls.matched = it->second;
            const auto pit = std::lower_bound(c.pred_ids.begin(), c.pred_ids.end(), *ls.matched);
            if (pit != c.pred_ids.end() && *pit == *ls.matched) {
                const auto p = static_cast<std::size_t>(pit - c.pred_ids.begin());
                const auto inter = c.intersection(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(p));
                ls.iou = c.iou(g, p);
                ls.accuracy = static_cast<double>(inter) / static_cast<double>(c.gt_area[g]);
            }
        }
        s.miou += ls.iou;
        s.macc += ls.accuracy;
        s.per_label.push_back(ls);
    }
    if (!s.per_label.empty()) {
        s.miou /= static_cast<double>(s.per_label.size());
        s.macc /= static_cast<double>(s.per_label.size());
    }
    return s;
}

double purity_3d(const Scene& scene, const std::vector<std::int32_t>& gt_label, const Codebook& cb) {
    if (gt_label.size() != scene.size()) throw std::invalid_argument("label count does not match scene size");
    if (scene.empty()) return 0.0;
    std::map<std::int32_t, std::map<std::int32_t, std::int64_t>> members;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        ++members[cb.quantize(scene.gaussians[i].feature)][gt_label[i]];
    }
    std::int64_t pure = 0;
    for (const auto& [id, by_label] : members) {
        std::int64_t best = 0;
        for (const auto& [label, n] : by_label) best = std::max(best, n);
        pure += best;
    }
    return static_cast<double>(pure) / static_cast<double>(scene.size());
}

double cross_view_consistency(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt) {
    if (pred.size() < 2) throw std::invalid_argument("cross-view consistency needs at least 2 views");
    check_aligned(pred, gt);
    std::map<std::int32_t, std::map<std::int32_t, std::int64_t>> hist;
    std::map<std::int32_t, std::int64_t> area;
    for (std::size_t v = 0; v < gt.size(); ++v) {
        for (std::size_t i = 0; i < gt[v].data.size(); ++i) {
            const std::int32_t g = gt[v].data[i];
            if (g == kBackground) continue;
            ++area[g];
            if (pred[v].data[i] != kBackground) ++hist[g][pred[v].data[i]];
        }
    }
    if (area.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [g, n] : area) {
        std::int64_t modal = 0;
        for (const auto& [id, count] : hist[g]) modal = std::max(modal, count);
        sum += static_cast<double>(modal) / static_cast<double>(n);
    }
    return sum / static_cast<double>(area.size());
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    nlohmann::json matching = nlohmann::json::object();
    for (const LabelScore& l : per_instance) {
        const nlohmann::json id = l.matched ? nlohmann::json(*l.matched) : nlohmann::json(nullptr);
        per.push_back({{"label", l.label}, {"matched_id", id}, {"iou", l.iou}, {"accuracy", l.accuracy}});
        matching[std::to_string(l.label)] = id;
    }
    return {{"miou", miou},
            {"macc", macc},
            {"per_instance_iou", per},
            {"matching", matching},
            {"purity_3d", purity_3d},
            {"cross_view_consistency", consistency},
            {"views_evaluated", views_evaluated}};
}

std::string EvalReport::table() const {
    std::ostringstream ss;
    char line[128];
    ss << "label  matched      IoU      Acc\n";
    for (const LabelScore& l : per_instance) {
        const std::string id = l.matched ? std::to_string(*l.matched) : "-";
        std::snprintf(line, sizeof(line), "%5d  %7s  %7.4f  %7.4f\n", l.label, id.c_str(), l.iou, l.accuracy);
        ss << line;
    }
    std::snprintf(line, sizeof(line),
                  "mIoU %.4f  mAcc %.4f  consistency %.4f  purity_3d %.4f  views %zu\n", miou, macc,
                  consistency, purity_3d, views_evaluated);
    ss << line;
    return ss.str();
}

EvalReport evaluate(const Scene& scene, const EvalData& data) {
    const Codebook cb(scene.feature_dim);
    std::vector<IdMap> pred;
    pred.reserve(data.cameras.size());
    for (const Camera& cam : data.cameras) pred.push_back(render_id_map(scene, cam, cb));

    EvalReport r;
    const Matching m = match_ids(pred, data.gt_maps);
    const SegmentationScores s = compute_miou_macc(pred, data.gt_maps, m);
    r.miou = s.miou;
    r.macc = s.macc;
    r.per_instance = s.per_label;
    r.purity_3d = purity_3d(scene, data.gt_labels, cb);
    r.consistency = pred.size() >= 2 ? cross_view_consistency(pred, data.gt_maps) : 0.0;
    r.views_evaluated = pred.size();
    return r;
}

}  // namespace instgs
