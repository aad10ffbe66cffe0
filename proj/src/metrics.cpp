#include "tcnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "tcnet/error.hpp"

namespace tcnet {

BinaryMask::BinaryMask(std::vector<int> s, std::vector<std::uint8_t> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (rank() != 2 && rank() != 3)
        throw DimensionError("binary mask must be rank 2 or 3, got " + shape_string(shape));
    if (checked_numel(shape) != values.size())
        throw DimensionError("binary mask value count does not match " + shape_string(shape));
    for (std::uint8_t x : values)
        if (x > 1) throw ConfigError("binary mask holds value " + std::to_string(x));
}

BinaryMask BinaryMask::from_tensor(const Tensor<float>& t, std::array<double, 3> spacing) {
    std::vector<int> s = t.shape;
    if (s.size() == 3 && s[0] == 1) s.erase(s.begin()); // [1,H,W] -> [H,W]
    std::vector<std::uint8_t> v(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (t.data[i] != 0.0f && t.data[i] != 1.0f)
            throw ConfigError("mask tensor is not binary");
        v[i] = t.data[i] == 1.0f ? 1 : 0;
    }
    BinaryMask m(std::move(s), std::move(v));
    m.spacing = spacing;
    return m;
}

std::size_t BinaryMask::foreground_count() const {
    std::size_t n = 0;
    for (std::uint8_t v : values) n += v;
    return n;
}

namespace {

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

Counts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.shape != gt.shape)
        throw DimensionError("metric: mask shapes differ: " + shape_string(pred.shape) + " vs " +
                             shape_string(gt.shape));
    Counts c;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        if (pred.values[i] && gt.values[i])
            ++c.tp;
        else if (pred.values[i])
            ++c.fp;
        else if (gt.values[i])
            ++c.fn;
    }
    return c;
}

struct Extents {
    int d = 1, h = 0, w = 0;
};

Extents extents_of(const BinaryMask& m) {
    Extents e;
    if (m.rank() == 2) {
        e.h = m.shape[0];
        e.w = m.shape[1];
    } else {
        e.d = m.shape[0];
        e.h = m.shape[1];
        e.w = m.shape[2];
    }
    return e;
}

// spacing per (z,y,x) axis: 2D masks use spacing[0] for y and spacing[1] for x.
std::array<double, 3> zyx_spacing(const BinaryMask& m) {
    if (m.rank() == 2) return {1.0, m.spacing[0], m.spacing[1]};
    return {m.spacing[0], m.spacing[1], m.spacing[2]};
}

// Exact nearest-neighbour queries over surface voxels using expanding
// Chebyshev shells on an occupancy grid; termination bound is shell index
// times the smallest spacing.
class SurfaceIndex {
public:
    SurfaceIndex(const std::vector<std::array<int, 3>>& pts, Extents e, std::array<double, 3> sp)
        : ext_(e), sp_(sp), occupied_(static_cast<std::size_t>(e.d) * e.h * e.w, 0) {
        for (const auto& p : pts) occupied_[flat(p[0], p[1], p[2])] = 1;
        min_spacing_ = std::min({sp[0], sp[1], sp[2]});
        max_shell_ = std::max({e.d, e.h, e.w});
    }

    double nearest_mm(const std::array<int, 3>& q) const {
        double best = std::numeric_limits<double>::infinity();
        for (int r = 0; r <= max_shell_; ++r) {
            if (static_cast<double>(r) * min_spacing_ > best) break;
            scan_shell(q, r, best);
        }
        return best;
    }

private:
    std::size_t flat(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ext_.h + y) * ext_.w + x;
    }

    void probe(int z, int y, int x, const std::array<int, 3>& q, double& best) const {
        if (z < 0 || z >= ext_.d || y < 0 || y >= ext_.h || x < 0 || x >= ext_.w) return;
        if (!occupied_[flat(z, y, x)]) return;
        const double dz = (z - q[0]) * sp_[0];
        const double dy = (y - q[1]) * sp_[1];
        const double dx = (x - q[2]) * sp_[2];
        const double d = std::sqrt(dz * dz + dy * dy + dx * dx);
        if (d < best) best = d;
    }

    void scan_shell(const std::array<int, 3>& q, int r, double& best) const {
        if (r == 0) {
            probe(q[0], q[1], q[2], q, best);
            return;
        }
        for (int dz = -r; dz <= r; ++dz) {
            const bool z_face = std::abs(dz) == r;
            for (int dy = -r; dy <= r; ++dy) {
                const bool y_face = std::abs(dy) == r;
                if (z_face || y_face) {
                    for (int dx = -r; dx <= r; ++dx) probe(q[0] + dz, q[1] + dy, q[2] + dx, q, best);
                } else {
                    probe(q[0] + dz, q[1] + dy, q[2] - r, q, best);
                    probe(q[0] + dz, q[1] + dy, q[2] + r, q, best);
                }
            }
        }
    }

    Extents ext_;
    std::array<double, 3> sp_;
    std::vector<std::uint8_t> occupied_;
    double min_spacing_ = 1.0;
    int max_shell_ = 0;
};

struct DirectedStats {
    double sum = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};

DirectedStats directed(const std::vector<std::array<int, 3>>& from, const SurfaceIndex& to) {
    DirectedStats s;
    for (const auto& p : from) {
        const double d = to.nearest_mm(p);
        s.sum += d;
        s.max = std::max(s.max, d);
        ++s.count;
    }
    return s;
}

void check_spacing(const BinaryMask& a, const BinaryMask& b) {
    if (zyx_spacing(a) != zyx_spacing(b))
        throw ConfigError("metric: mask spacings differ");
    for (double s : a.spacing)
        if (s <= 0.0) throw ConfigError("metric: spacing must be positive");
}

} // namespace

double dsc(const BinaryMask& pred, const BinaryMask& gt) {
    const Counts c = confusion(pred, gt);
    const std::size_t den = 2 * c.tp + c.fp + c.fn;
    if (den == 0) return 1.0; // both empty
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double dsc_global(const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs) {
    if (pairs.empty()) throw ConfigError("dsc_global: empty pair list");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [p, g] : pairs) {
        const Counts c = confusion(p, g);
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
    }
    const std::size_t den = 2 * tp + fp + fn;
    if (den == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(den);
}

std::pair<double, double> recall_precision(const BinaryMask& pred, const BinaryMask& gt) {
    const Counts c = confusion(pred, gt);
    const bool both_empty = c.tp + c.fp + c.fn == 0;
    const double recall = c.tp + c.fn > 0
                              ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                              : (both_empty ? 1.0 : 0.0);
    const double precision = c.tp + c.fp > 0
                                 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                                 : (both_empty ? 1.0 : 0.0);
    return {recall, precision};
}

std::vector<std::array<int, 3>> surface(const BinaryMask& mask) {
    const Extents e = extents_of(mask);
    const bool three_d = mask.rank() == 3;
    std::vector<std::array<int, 3>> pts;
    auto fg = [&](int z, int y, int x) {
        if (z < 0 || z >= e.d || y < 0 || y >= e.h || x < 0 || x >= e.w) return false;
        return mask.values[(static_cast<std::size_t>(z) * e.h + y) * e.w + x] != 0;
    };
    for (int z = 0; z < e.d; ++z)
        for (int y = 0; y < e.h; ++y)
            for (int x = 0; x < e.w; ++x) {
                if (!fg(z, y, x)) continue;
                bool boundary = !fg(z, y - 1, x) || !fg(z, y + 1, x) || !fg(z, y, x - 1) ||
                                !fg(z, y, x + 1);
                if (three_d) boundary = boundary || !fg(z - 1, y, x) || !fg(z + 1, y, x);
                if (boundary) pts.push_back({z, y, x});
            }
    return pts;
}

std::optional<double> assd(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.shape != gt.shape)
        throw DimensionError("assd: mask shapes differ");
    check_spacing(pred, gt);
    const auto sp = surface(pred);
    const auto sg = surface(gt);
    if (sp.empty() || sg.empty()) return std::nullopt;
    const Extents e = extents_of(pred);
    const auto spacing = zyx_spacing(pred);
    const SurfaceIndex ip(sp, e, spacing), ig(sg, e, spacing);
    const DirectedStats a = directed(sp, ig);
    const DirectedStats b = directed(sg, ip);
    return (a.sum + b.sum) / static_cast<double>(a.count + b.count);
}

std::optional<double> hd(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.shape != gt.shape)
        throw DimensionError("hd: mask shapes differ");
    check_spacing(pred, gt);
    const auto sp = surface(pred);
    const auto sg = surface(gt);
    if (sp.empty() || sg.empty()) return std::nullopt;
    const Extents e = extents_of(pred);
    const auto spacing = zyx_spacing(pred);
    const SurfaceIndex ip(sp, e, spacing), ig(sg, e, spacing);
    return std::max(directed(sp, ig).max, directed(sg, ip).max);
}

namespace {

struct Moments {
    double mean = 0.0, stddev = 0.0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(acc / static_cast<double>(xs.size()));
    return m;
}

} // namespace

MetricsReport compute_metrics(const std::vector<std::string>& ids,
                              const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs) {
    if (ids.size() != pairs.size()) throw ConfigError("compute_metrics: id/pair count mismatch");
    MetricsReport report;
    std::vector<double> dscs, recalls, precisions, assds, hds;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [p, g] = pairs[i];
        SampleMetrics s;
        s.id = ids[i];
        s.dsc = dsc(p, g);
        std::tie(s.recall, s.precision) = recall_precision(p, g);
        s.assd_mm = assd(p, g);
        s.hd_mm = hd(p, g);
        dscs.push_back(s.dsc);
        recalls.push_back(s.recall);
        precisions.push_back(s.precision);
        if (s.assd_mm && s.hd_mm) {
            assds.push_back(*s.assd_mm);
            hds.push_back(*s.hd_mm);
        } else {
            ++report.distance_excluded;
        }
        report.per_sample.push_back(std::move(s));
    }
    report.dsc_global = dsc_global(pairs);
    const Moments md = moments(dscs), mr = moments(recalls), mp = moments(precisions),
                  ma = moments(assds), mh = moments(hds);
    report.mean_dsc = md.mean;
    report.std_dsc = md.stddev;
    report.mean_recall = mr.mean;
    report.std_recall = mr.stddev;
    report.mean_precision = mp.mean;
    report.std_precision = mp.stddev;
    report.mean_assd = ma.mean;
    report.std_assd = ma.stddev;
    report.mean_hd = mh.mean;
    report.std_hd = mh.stddev;
    return report;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "id,dsc,recall,precision,asd_mm,hd_mm\n";
    f.precision(9);
    auto opt = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("");
    };
    for (const auto& s : report.per_sample)
        f << s.id << ',' << s.dsc << ',' << s.recall << ',' << s.precision << ',' << opt(s.assd_mm)
          << ',' << opt(s.hd_mm) << '\n';
    f << "MEAN," << report.mean_dsc << ',' << report.mean_recall << ',' << report.mean_precision << ','
      << report.mean_assd << ',' << report.mean_hd << '\n';
    f << "STD," << report.std_dsc << ',' << report.std_recall << ',' << report.std_precision << ','
      << report.std_assd << ',' << report.std_hd << '\n';
    f << "GLOBAL," << report.dsc_global << ",,,,\n";
    if (!f) throw IoError("write failed: " + path);
}

} // namespace tcnet
