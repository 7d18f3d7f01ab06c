// Acceptance gate: one pass/fail line per criterion, exit 0 only if all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "maod/acquisition.hpp"
#include "maod/autograd.hpp"
#include "maod/cli.hpp"
#include "maod/kernels.hpp"
#include "maod/train.hpp"

using namespace maod;
using autograd::Var;
using autograd::backward;
using autograd::param;
namespace ops = autograd::ops;
namespace fs = std::filesystem;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Criterion {
    bool ok = true;
    std::string fail_detail;
    std::string info;

    void expect(bool cond, const std::string& what) {
        if (cond) return;
        ok = false;
        if (!fail_detail.empty()) fail_detail += "; ";
        fail_detail += what;
    }
};

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

Tensor random_offzero(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.vec()) {
        const double m = rng.uniform(0.02, 1.0);
        v = rng.bernoulli(0.5) ? m : -m;
    }
    return t;
}

Parameter make_param(const std::string& name, Tensor value) {
    return Parameter{name, std::move(value), {}, false};
}

Var readout(const Var& v, Rng& rng) {
    Tensor coeffs(v.value().shape());
    for (auto& c : coeffs.vec()) c = rng.uniform(-1.0, 1.0);
    return ops::weighted_sum(v, coeffs);
}

using LossBuilder = std::function<Var(std::vector<Parameter>&)>;

struct FdStats {
    double max_rel = 0.0;
    std::size_t checks = 0;
};

void fd_check(Criterion& c, FdStats& stats, std::vector<Parameter>& params,
              const LossBuilder& build) {
    if (!c.ok) return;
    for (auto& p : params) p.zero_grad();
    const Var loss = build(params);
    backward(loss);
    const double h = 1e-4;
    for (auto& p : params) {
        if (p.grad.empty()) {
            c.expect(false, "missing gradient for " + p.name);
            return;
        }
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double keep = p.value[i];
            p.value[i] = keep + h;
            const double up = build(params).scalar();
            p.value[i] = keep - h;
            const double down = build(params).scalar();
            p.value[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double a = p.grad[i];
            const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            stats.max_rel = std::max(stats.max_rel, rel);
            ++stats.checks;
            if (rel > 1e-5) {
                c.expect(false, strfmt("%s[%zu]: rel err %.3g", p.name.c_str(), i, rel));
                return;
            }
        }
    }
}

// direct-summation depthwise then pointwise stages, independent of the kernels
Tensor two_stage_oracle(const Tensor& x, const Tensor& dw, const Tensor& pw, int stride,
                        int padding) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int K = dw.dim(2);
    const int oh = (H + 2 * padding - K) / stride + 1;
    const int ow = (W + 2 * padding - K) / stride + 1;
    Tensor mid(Shape{C, oh, ow});
    for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                double acc = 0.0;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        const int iy = y * stride + ky - padding;
                        const int ix = xo * stride + kx - padding;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                        acc += x.at3(ch, iy, ix) *
                               dw[static_cast<std::size_t>((ch * K + ky) * K + kx)];
                    }
                mid.at3(ch, y, xo) = acc;
            }
    const int O = pw.dim(0);
    Tensor out(Shape{O, oh, ow});
    for (int o = 0; o < O; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                double acc = 0.0;
                for (int ch = 0; ch < C; ++ch)
                    acc += pw[static_cast<std::size_t>(o * C + ch)] * mid.at3(ch, y, xo);
                out.at3(o, y, xo) = acc;
            }
    return out;
}

// exhaustive assignment enumeration over the smaller side's subsets
std::size_t oracle_matches(std::size_t np, std::size_t nt,
                           const std::function<bool(std::size_t, std::size_t)>& compatible) {
    const bool flip = nt > np;
    const std::size_t big = flip ? nt : np;
    const std::size_t small = flip ? np : nt;
    const auto ok = [&](std::size_t b, std::size_t s) {
        return flip ? compatible(s, b) : compatible(b, s);
    };
    std::vector<int> dp(std::size_t{1} << small, -1);
    dp[0] = 0;
    for (std::size_t b = 0; b < big; ++b) {
        std::vector<int> next = dp;
        for (std::size_t mask = 0; mask < dp.size(); ++mask) {
            if (dp[mask] < 0) continue;
            for (std::size_t s = 0; s < small; ++s) {
                if ((mask >> s) & 1u) continue;
                if (!ok(b, s)) continue;
                const std::size_t m2 = mask | (std::size_t{1} << s);
                next[m2] = std::max(next[m2], dp[mask] + 1);
            }
        }
        dp = std::move(next);
    }
    return static_cast<std::size_t>(*std::max_element(dp.begin(), dp.end()));
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw ValidationError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool same_file(const std::string& a, const std::string& b) { return slurp(a) == slurp(b); }

bool same_tree(Criterion& c, const std::string& a, const std::string& b) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a))
        if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
        if (!fs::exists(fs::path(b) / name)) {
            c.expect(false, name + " missing from rerun");
            return false;
        }
        if (!same_file((fs::path(a) / name).string(), (fs::path(b) / name).string())) {
            c.expect(false, name + " differs between reruns");
            return false;
        }
    }
    return true;
}

Tensor gray_frame() { return Tensor(Shape{3, 64, 64}, 0.5); }

struct DeskArtifacts {
    SystemConfig config = SystemConfig::defaults();
    ModelBundle bundle;
    std::optional<System> system;
    std::optional<Dataset> dataset;
    std::vector<std::string> fe_sums;
    bool ready = false;
};

}  // namespace

int main() {
    int failures = 0;
    const auto run = [&](int idx, const std::string& name,
                         const std::function<void(Criterion&)>& body) {
        Criterion c;
        try {
            body(c);
        } catch (const std::exception& e) {
            c.ok = false;
            c.fail_detail = std::string("exception: ") + e.what();
        }
        std::string line = strfmt("criterion %2d: %s  %s", idx, c.ok ? "PASS" : "FAIL",
                                  name.c_str());
        if (!c.info.empty()) line += " (" + c.info + ")";
        if (!c.ok) line += " -- " + c.fail_detail;
        std::puts(line.c_str());
        std::fflush(stdout);
        if (!c.ok) ++failures;
    };

    DeskArtifacts desk;

    run(1, "finite-difference gradient checks", [&](Criterion& c) {
        const auto t0 = std::chrono::steady_clock::now();
        FdStats stats;
        Rng rng(8101);
        for (int trial = 0; trial < 50 && c.ok; ++trial) {
            // standard convolution
            {
                const int C = 1 + static_cast<int>(rng.uniform_int(2));
                const int O = 1 + static_cast<int>(rng.uniform_int(2));
                const int K = 1 + 2 * static_cast<int>(rng.uniform_int(2));
                const int S = 1 + static_cast<int>(rng.uniform_int(2));
                const int H = K + static_cast<int>(rng.uniform_int(3));
                const auto spec = ConvSpec::standard(C, O, K, S, 1);
                std::vector<Parameter> ps;
                ps.push_back(make_param("conv.x", random_tensor({C, H, H}, rng)));
                ps.push_back(make_param("conv.w", random_tensor(spec.weight_shape(), rng)));
                const std::uint64_t seed = rng.next_u64();
                fd_check(c, stats, ps, [&, spec, seed](std::vector<Parameter>& p) {
                    Rng r(seed);
                    return readout(ops::conv2d(param(p[0]), param(p[1]), spec), r);
                });
            }
            // depthwise separable block
            {
                const int C = 1 + static_cast<int>(rng.uniform_int(2));
                const int O = 1 + static_cast<int>(rng.uniform_int(2));
                const int S = 1 + static_cast<int>(rng.uniform_int(2));
                const int H = 3 + static_cast<int>(rng.uniform_int(3));
                std::vector<Parameter> ps;
                ps.push_back(make_param("ds.x", random_tensor({C, H, H}, rng)));
                ps.push_back(make_param("ds.dw", random_tensor({C, 1, 3, 3}, rng)));
                ps.push_back(make_param("ds.pw", random_tensor({O, C, 1, 1}, rng)));
                const std::uint64_t seed = rng.next_u64();
                fd_check(c, stats, ps, [&, S, seed](std::vector<Parameter>& p) {
                    Rng r(seed);
                    return readout(
                        ops::depthwise_separable(param(p[0]), param(p[1]), param(p[2]), S, 1),
                        r);
                });
            }
            // linear layer and global average pool
            {
                const int N = 1 + static_cast<int>(rng.uniform_int(5));
                const int M = 1 + static_cast<int>(rng.uniform_int(5));
                std::vector<Parameter> ps;
                ps.push_back(make_param("lin.x", random_tensor({N}, rng)));
                ps.push_back(make_param("lin.w", random_tensor({M, N}, rng)));
                ps.push_back(make_param("lin.b", random_tensor({M}, rng)));
                const std::uint64_t seed = rng.next_u64();
                fd_check(c, stats, ps, [&, seed](std::vector<Parameter>& p) {
                    Rng r(seed);
                    return readout(ops::linear(param(p[0]), param(p[1]), param(p[2])), r);
                });

                const int C = 1 + static_cast<int>(rng.uniform_int(3));
                const int H = 1 + static_cast<int>(rng.uniform_int(3));
                std::vector<Parameter> gp;
                gp.push_back(make_param("gap.x", random_tensor({C, H, H}, rng)));
                const std::uint64_t seed2 = rng.next_u64();
                fd_check(c, stats, gp, [&, seed2](std::vector<Parameter>& p) {
                    Rng r(seed2);
                    return readout(ops::global_avg_pool(param(p[0])), r);
                });
            }
            // activations
            {
                const int N = 2 + static_cast<int>(rng.uniform_int(6));
                std::vector<Parameter> ps;
                ps.push_back(make_param("act.x", random_offzero({N}, rng)));
                const std::uint64_t seed = rng.next_u64();
                fd_check(c, stats, ps, [&, seed](std::vector<Parameter>& p) {
                    Rng r(seed);
                    return readout(ops::relu(param(p[0])), r);
                });
                fd_check(c, stats, ps, [&, seed](std::vector<Parameter>& p) {
                    Rng r(seed);
                    return readout(ops::sigmoid(param(p[0])), r);
                });
                fd_check(c, stats, ps, [&, seed](std::vector<Parameter>& p) {
                    Rng r(seed);
                    return readout(ops::softmax(param(p[0])), r);
                });
                const double drop = rng.uniform(0.0, 0.6);
                const std::uint64_t mask_seed = rng.next_u64();
                fd_check(c, stats, ps, [&, seed, drop, mask_seed](std::vector<Parameter>& p) {
                    Rng mask(mask_seed);
                    Rng r(seed);
                    return readout(ops::dropout(param(p[0]), drop, true, mask), r);
                });
            }
            // weighted cross-entropy and box regression losses
            {
                const int N = 2 + static_cast<int>(rng.uniform_int(5));
                Tensor target(Shape{N});
                target[static_cast<std::size_t>(rng.uniform_int(N))] = 1.0;
                Tensor alpha = random_tensor(Shape{N}, rng, 0.2, 3.0);
                std::vector<Parameter> ps;
                ps.push_back(make_param("ce.z", random_tensor({N}, rng, -2.0, 2.0)));
                fd_check(c, stats, ps, [&](std::vector<Parameter>& p) {
                    return ops::weighted_cross_entropy(param(p[0]), target, alpha);
                });

                const Tensor box_target = random_tensor({4}, rng, 0.1, 0.9);
                std::vector<Parameter> bp;
                bp.push_back(make_param("se.p", random_tensor({4}, rng, 0.1, 0.9)));
                fd_check(c, stats, bp, [&](std::vector<Parameter>& p) {
                    return ops::squared_error(param(p[0]), box_target);
                });
            }
        }
        const double elapsed = seconds_since(t0);
        c.expect(elapsed < 60.0, strfmt("took %.1fs (budget 60s)", elapsed));
        c.info = strfmt("%zu element checks, max rel err %.2e, %.1fs", stats.checks,
                        stats.max_rel, elapsed);
    });

    run(2, "depthwise-separable equivalence and parameter budget", [&](Criterion& c) {
        Rng rng(8202);
        double max_diff = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            const int C = 1 + static_cast<int>(rng.uniform_int(4));
            const int O = 1 + static_cast<int>(rng.uniform_int(5));
            const int S = 1 + static_cast<int>(rng.uniform_int(2));
            const int P = static_cast<int>(rng.uniform_int(2));
            const int H = 3 + static_cast<int>(rng.uniform_int(6));
            const Tensor x = random_tensor({C, H, H}, rng);
            const Tensor dw = random_tensor({C, 1, 3, 3}, rng);
            const Tensor pw = random_tensor({O, C, 1, 1}, rng);
            const Tensor got = kernels::depthwise_separable(x, dw, pw, S, P);
            const Tensor want = two_stage_oracle(x, dw, pw, S, P);
            for (std::size_t i = 0; i < got.numel(); ++i)
                max_diff = std::max(max_diff, std::abs(got.vec()[i] - want.vec()[i]));
        }
        c.expect(max_diff <= 1e-12, strfmt("composed vs two-stage diff %.3g", max_diff));

        c.expect(standard_conv_param_count(32, 64, 3) == 18432, "standard 32->64 count");
        c.expect(separable_param_count(32, 64, 3) == 2336, "separable 32->64 count");
        for (int trial = 0; trial < 50; ++trial) {
            const int C = 1 + static_cast<int>(rng.uniform_int(64));
            const int O = 1 + static_cast<int>(rng.uniform_int(64));
            const int K = 1 + 2 * static_cast<int>(rng.uniform_int(3));
            const auto cc = static_cast<std::size_t>(C);
            const auto oo = static_cast<std::size_t>(O);
            const auto kk = static_cast<std::size_t>(K);
            c.expect(standard_conv_param_count(C, O, K) == cc * oo * kk * kk,
                     "standard count formula");
            c.expect(separable_param_count(C, O, K) == cc * kk * kk + cc * oo,
                     "separable count formula");
            const auto ws = ConvSpec::standard(C, O, K).weight_shape();
            std::size_t numel = 1;
            for (const auto d : ws) numel *= d;
            c.expect(numel == cc * oo * kk * kk, "weight tensor numel");
        }
        c.info = strfmt("max diff %.2e, 18432 -> 2336 confirmed", max_diff);
    });

    run(3, "loss oracles", [&](Criterion& c) {
        Rng rng(8303);
        double max_diff = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const int N = 2 + static_cast<int>(rng.uniform_int(7));
            const Tensor logits = random_tensor(Shape{N}, rng, -4.0, 4.0);
            const int target = static_cast<int>(rng.uniform_int(N));
            const double weighted = weighted_ce_loss(logits, target, ClassWeights::ones(N));
            double zmax = logits[0];
            for (std::size_t i = 1; i < logits.numel(); ++i) zmax = std::max(zmax, logits[i]);
            double lse = 0.0;
            for (std::size_t i = 0; i < logits.numel(); ++i) lse += std::exp(logits[i] - zmax);
            const double plain = std::log(lse) + zmax - logits[static_cast<std::size_t>(target)];
            max_diff = std::max(max_diff, std::abs(weighted - plain));
        }
        c.expect(max_diff <= 1e-12, strfmt("alpha=1 CE vs plain CE diff %.3g", max_diff));

        const BoxTarget b{0.5, 0.5, 0.5, 0.5};
        c.expect(fine_loss(b, b) == 0.0, "identical boxes must cost exactly 0");
        const BoxTarget shifted{0.4, 0.6, 0.4, 0.6};
        const double hand = fine_loss(shifted, b);
        c.expect(std::abs(hand - 0.04) <= 1e-15, strfmt("hand case gave %.17g", hand));
        c.info = strfmt("CE diff %.2e, box hand cases exact", max_diff);
    });

    run(4, "metric oracles vs exhaustive assignment", [&](Criterion& c) {
        Rng rng(8404);
        for (int trial = 0; trial < 200 && c.ok; ++trial) {
            std::size_t np, nt;
            if (rng.bernoulli(0.5)) {
                np = rng.uniform_int(21);
                nt = rng.uniform_int(13);
            } else {
                np = rng.uniform_int(13);
                nt = rng.uniform_int(21);
            }
            std::vector<std::vector<bool>> compat(np, std::vector<bool>(nt));
            for (auto& row : compat)
                for (std::size_t t = 0; t < nt; ++t) row[t] = rng.bernoulli(0.3);
            const auto fn = [&](std::size_t p, std::size_t t) { return bool(compat[p][t]); };
            const std::size_t got = max_matches(np, nt, fn);
            const std::size_t want = oracle_matches(np, nt, fn);
            c.expect(got == want, strfmt("matcher %zu vs oracle %zu (np=%zu nt=%zu)", got,
                                         want, np, nt));

            const Metrics m = Metrics::from_counts(got, np, nt);
            if (np == 0 || nt == 0) {
                c.expect(m.degenerate && m.f1 == 0.0, "degenerate case must report F1 = 0");
            } else {
                const double precision = static_cast<double>(got) / static_cast<double>(np);
                const double recall = static_cast<double>(got) / static_cast<double>(nt);
                c.expect(std::abs(m.precision - precision) <= 1e-15, "precision formula");
                c.expect(std::abs(m.recall - recall) <= 1e-15, "recall formula");
                const double f1 = (precision + recall) == 0.0
                                      ? 0.0
                                      : 2.0 * precision * recall / (precision + recall);
                c.expect(std::abs(m.f1 - f1) <= 1e-15, "F1 formula");
            }
        }
        c.expect(f1_score(0, 0, 0) == 0.0, "empty case");
        c.expect(f1_score(0, 5, 0) == 0.0, "no targets");
        c.expect(f1_score(0, 0, 5) == 0.0, "no predictions");
        c.expect(f1_score(0, 5, 5) == 0.0, "zero true positives");
        c.info = "200 randomized instances";
    });

    run(5, "desk-scale training run", [&](Criterion& c) {
        const auto t0 = std::chrono::steady_clock::now();
        desk.dataset = gen_dataset({607, 452, 328}, 1, GenConfig{});

        ModelBundle bundle;
        Rng rng(1);
        desk.system.emplace(build_system(desk.config, bundle, rng));

        const auto proxy_set = gen_proxy_dataset(40, derive_seed(1, 0xF00Du), GenConfig{});
        Rng proxy_rng(derive_seed(1, 0xF00Eu));
        proxy_pretrain(desk.system->extractor, bundle, proxy_set, 6, proxy_rng);
        freeze(bundle, Extractor::kPrefix);
        desk.fe_sums.push_back(bundle.checksum(Extractor::kPrefix));

        TrainConfig tc;
        tc.seed = 1;
        for (const HeadKind kind : {HeadKind::Meta, HeadKind::Rough, HeadKind::Fine}) {
            train_head(kind, *desk.system, bundle, *desk.dataset, tc);
            desk.fe_sums.push_back(bundle.checksum(Extractor::kPrefix));
        }

        const MetaEvalResult meta = evaluate_meta(*desk.system, bundle, *desk.dataset);
        const Metrics rough =
            evaluate_rough(*desk.system, bundle, *desk.dataset, desk.config.grid, 0.5);
        const FineEvalResult fine = evaluate_fine(*desk.system, bundle, *desk.dataset, 0.5);
        const double elapsed = seconds_since(t0);

        desk.bundle = bundle;
        desk.ready = true;

        c.expect(elapsed < 600.0, strfmt("pipeline took %.0fs (budget 600s)", elapsed));
        c.expect(meta.accuracy >= 0.85, strfmt("meta accuracy %.4f < 0.85", meta.accuracy));

        const auto& cm = meta.confusion.counts;
        const std::size_t no_vs_obj = cm[0][1] + cm[0][2] + cm[1][0] + cm[2][0];
        const std::size_t far_vs_close = cm[1][2] + cm[2][1];
        const std::size_t errors = no_vs_obj + far_vs_close;
        if (errors > 0) {
            c.expect(5 * no_vs_obj <= errors,
                     strfmt("no-object confusions %zu of %zu errors", no_vs_obj, errors));
            c.expect(2 * far_vs_close > errors,
                     strfmt("far/close confusions %zu of %zu errors", far_vs_close, errors));
        }
        c.expect(rough.f1 >= 0.70, strfmt("rough F1 %.4f < 0.70", rough.f1));
        c.expect(fine.mean_iou >= 0.5, strfmt("fine mean IoU %.4f < 0.5", fine.mean_iou));
        c.expect(fine.metrics.f1 >= 0.8, strfmt("fine F1 %.4f < 0.8", fine.metrics.f1));
        c.info = strfmt("meta %.3f, rough F1 %.3f, fine mIoU %.3f F1 %.3f, %.0fs",
                        meta.accuracy, rough.f1, fine.mean_iou, fine.metrics.f1, elapsed);
    });

    run(6, "shared-extractor amortization", [&](Criterion& c) {
        c.expect(desk.ready, "no trained models (criterion 5 failed)");
        if (!desk.ready) return;
        Pipeline pipeline(desk.config, ModelBundle(desk.bundle));

        const Tensor* probe = nullptr;
        for (const auto& s : desk.dataset->samples) {
            if (!s.is_test) continue;
            const auto result = pipeline.process_frame(s.image).first;
            if (!std::holds_alternative<Nothing>(result)) {
                probe = &s.image;
                break;
            }
        }
        c.expect(probe != nullptr, "no test frame routes to a detection head");
        if (!probe) return;

        const AmortizationReport report = amortization_probe(pipeline, *probe, 50);
        c.expect(report.shared_s < report.unshared_s,
                 strfmt("shared %.6fs !< unshared %.6fs", report.shared_s, report.unshared_s));
        c.expect(report.meta_fraction() < 0.25,
                 strfmt("meta stage is %.1f%% of frame time", 100.0 * report.meta_fraction()));
        c.info = strfmt("shared %.4fs, unshared %.4fs, meta %.1f%%", report.shared_s,
                        report.unshared_s, 100.0 * report.meta_fraction());
    });

    run(7, "extractor freeze contract", [&](Criterion& c) {
        c.expect(desk.ready, "no trained models (criterion 5 failed)");
        if (!desk.ready) return;
        c.expect(desk.fe_sums.size() == 4, "expected one checksum per training command");
        for (std::size_t i = 1; i < desk.fe_sums.size(); ++i)
            c.expect(desk.fe_sums[i] == desk.fe_sums[0],
                     strfmt("extractor changed during training command %zu", i));
        c.info = "checksums identical across meta/rough/fine training";
    });

    run(8, "byte protocol conformance", [&](Criterion& c) {
        const AcqFrame frames[] = {
            AcqFrame::request(),
            AcqFrame::no_object(),
            AcqFrame::response(4660, -19),
            AcqFrame::response(-32768, 32767),
            AcqFrame::error(kErrBadRequest),
        };
        std::size_t flips = 0;
        for (const AcqFrame& f : frames) {
            const auto clean = encode_frame(f);
            const DecodeResult r = decode_frame(clean);
            c.expect(r.status == DecodeStatus::Ok && r.frame == f, "round-trip identity");
            for (std::size_t i = 0; i < clean.size(); ++i)
                for (int bit = 0; bit < 8; ++bit) {
                    auto bytes = clean;
                    bytes[i] ^= static_cast<std::uint8_t>(1u << bit);
                    ++flips;
                    if (decode_frame(bytes).status == DecodeStatus::Ok)
                        c.expect(false, strfmt("bit %d of byte %zu went undetected", bit, i));
                }
        }

        const Calibration calib = Calibration::defaults();
        FrameBuffer buffer;
        const CameraSource camera = []() -> std::optional<Tensor> { return gray_frame(); };
        const CameraSource silent = []() -> std::optional<Tensor> { return std::nullopt; };
        const auto still = [](DetectionResult r) {
            return DetectorFn([r](const Tensor&) { return r; });
        };

        auto reply = handle_request(AcqFrame::request(), camera, still(Nothing{}), calib, buffer);
        c.expect(reply == AcqFrame::no_object() && buffer.empty(), "no-object path");
        reply = handle_request(AcqFrame::request(), camera,
                               still(FineBox{BoxTarget{0.5, 0.6, 0.3, 0.3}}), calib, buffer);
        c.expect(reply.type == FrameType::PositionResponse && buffer.empty(), "response path");
        reply = handle_request(AcqFrame::request(), silent, still(Nothing{}), calib, buffer);
        c.expect(reply == AcqFrame::error(kErrCameraTimeout) && buffer.empty(), "timeout path");
        reply = handle_request(AcqFrame::request(), camera,
                               still(FineBox{BoxTarget{0.5, 0.02, 0.1, 0.1}}), calib, buffer);
        c.expect(reply == AcqFrame::error(kErrNoGroundPoint) && buffer.empty(),
                 "geometry error path");
        bool threw = false;
        try {
            handle_request(
                AcqFrame::request(), camera,
                [](const Tensor&) -> DetectionResult { throw std::runtime_error("fault"); },
                calib, buffer);
        } catch (const std::runtime_error&) {
            threw = true;
        }
        c.expect(threw && buffer.empty(), "throwing-detector path");
        c.info = strfmt("%zu bit flips all detected, buffer empty on 5 paths", flips);
    });

    run(9, "ground-plane geometry round trip", [&](Criterion& c) {
        const Calibration calib = Calibration::defaults();
        Rng rng(8909);
        double worst = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            const double u = rng.uniform(0.0, 63.0);
            const double v = rng.uniform(6.0, 63.0);
            const auto [X, Y] = pixel_to_robot(u, v, calib);
            const auto [u2, v2] = robot_to_pixel(X, Y, calib);
            const auto [X2, Y2] = pixel_to_robot(u2, v2, calib);
            worst = std::max(worst, std::hypot(X2 - X, Y2 - Y));
        }
        c.expect(worst <= 1e-6, strfmt("worst round-trip error %.3g m", worst));
        c.info = strfmt("1000 points, worst %.2e m", worst);
    });

    run(10, "closed-loop approach and grasp", [&](Criterion& c) {
        const SimResult oracle =
            simulate_approach(SimWorld{}, OracleDetector{}, Calibration::defaults(), 200);
        c.expect(oracle.final_phase == Phase::Grasped,
                 strfmt("oracle run ended in %s", phase_name(oracle.final_phase)));
        c.expect(oracle.final_distance <= 0.05,
                 strfmt("oracle final distance %.3f m", oracle.final_distance));

        c.expect(desk.ready, "no trained models (criterion 5 failed)");
        if (!desk.ready) return;
        Pipeline pipeline(desk.config, ModelBundle(desk.bundle));
        int grasped = 0;
        std::string outcomes;
        for (int w = 1; w <= 10; ++w) {
            Rng wr(1000 + static_cast<std::uint64_t>(w));
            SimWorld world;
            world.object_x = wr.uniform(0.55, 0.95);
            world.object_y = wr.uniform(-0.35, 0.35);
            world.object_radius = wr.uniform(0.05, 0.08);
            world.seed = static_cast<std::uint64_t>(w);
            const SimResult sim =
                simulate_approach(world, &pipeline, Calibration::defaults(), 400);
            if (sim.final_phase == Phase::Grasped) ++grasped;
            outcomes += sim.final_phase == Phase::Grasped ? 'G' : '.';
        }
        c.expect(grasped >= 8, strfmt("trained models grasped %d of 10 [%s]", grasped,
                                      outcomes.c_str()));
        c.info = strfmt("oracle %d steps; trained %d/10 [%s]", oracle.steps, grasped,
                        outcomes.c_str());
    });

    run(11, "manifest reproducibility", [&](Criterion& c) {
        const fs::path root = fs::temp_directory_path() / "maod_acceptance_repro";
        fs::remove_all(root);
        fs::create_directories(root);
        const auto sub = [&](const char* name) { return (root / name).string(); };

        GenOptions gen;
        gen.counts = {6, 6, 6};
        gen.seed = 11;
        gen.out = sub("gen_a");
        cmd_gen(gen);
        gen.out = sub("gen_b");
        cmd_gen(gen);
        same_tree(c, sub("gen_a") + "/dataset", sub("gen_b") + "/dataset");
        c.expect(same_file(sub("gen_a") + "/run_manifest.json",
                           sub("gen_b") + "/run_manifest.json"),
                 "gen manifest differs");

        {
            std::ofstream cfg(sub("fast.cfg"));
            cfg << "[train]\nproxy_per_class = 4\nproxy_epochs = 1\nepochs = 1\nbatch = 8\n";
        }
        TrainOptions train;
        train.data = sub("gen_a") + "/dataset";
        train.seed = 11;
        train.config_path = sub("fast.cfg");
        train.out = sub("train_a");
        cmd_train(train);
        train.out = sub("train_b");
        cmd_train(train);
        for (const char* f : {"extractor.ckpt", "meta.ckpt", "rough.ckpt", "fine.ckpt",
                              "loss_meta.csv", "loss_rough.csv", "loss_fine.csv",
                              "run_manifest.json"})
            c.expect(same_file(sub("train_a") + "/" + f, sub("train_b") + "/" + f),
                     std::string(f) + " differs between train reruns");

        EvalOptions eval;
        eval.data = sub("gen_a") + "/dataset";
        for (const char* name : {"extractor", "meta", "rough", "fine"})
            eval.checkpoints.push_back(sub("train_a") + "/" + name + ".ckpt");
        eval.out = sub("eval_a");
        cmd_eval(eval);
        eval.out = sub("eval_b");
        cmd_eval(eval);
        // the per-situation metric CSVs carry cpu_time columns (timing, excluded)
        for (const char* f : {"summary.json", "confusion.csv", "run_manifest.json"})
            c.expect(same_file(sub("eval_a") + "/" + f, sub("eval_b") + "/" + f),
                     std::string(f) + " differs between eval reruns");

        BenchOptions bench;
        bench.data = sub("gen_a") + "/dataset";
        bench.checkpoints = eval.checkpoints;
        bench.frames = 2;
        bench.trials = 31;
        bench.out = sub("bench_a");
        cmd_bench(bench);
        bench.out = sub("bench_b");
        cmd_bench(bench);
        // every bench artifact except the manifest is a timing report
        c.expect(same_file(sub("bench_a") + "/run_manifest.json",
                           sub("bench_b") + "/run_manifest.json"),
                 "bench manifest differs");

        SimOptions sim;
        sim.oracle = true;
        sim.seed = 11;
        sim.max_steps = 150;
        sim.out = sub("sim_a");
        cmd_sim(sim);
        sim.out = sub("sim_b");
        cmd_sim(sim);
        for (const char* f : {"trajectory.csv", "sim_summary.json", "run_manifest.json"})
            c.expect(same_file(sub("sim_a") + "/" + f, sub("sim_b") + "/" + f),
                     std::string(f) + " differs between sim reruns");

        fs::remove_all(root);
        c.info = "gen/train/eval/bench/sim reruns byte-identical (timing files excluded)";
    });

    if (failures == 0) {
        std::puts("acceptance: all criteria passed");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", failures);
    return 1;
}
