#include "notehelp/fusion_kernels.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

namespace notehelp::kernels {

namespace {

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// y = x W for a row-major d_in x d_out matrix.
void row_times(std::span<const double> x, const std::vector<double>& w, std::size_t dOut, double* y) {
    std::fill(y, y + dOut, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double* row = w.data() + i * dOut;
        for (std::size_t j = 0; j < dOut; ++j) y[j] += xi * row[j];
    }
}

void zero_like(const FusionModel& model, FusionModel& g) {
    g = FusionModel::zeros(model.dim, model.heads);
}

void add_into(FusionModel& dst, const FusionModel& src) {
    auto d = dst.blocks();
    auto s = src.blocks();
    for (std::size_t b = 0; b < d.size(); ++b) {
        for (std::size_t i = 0; i < d[b].second.size(); ++i) d[b].second[i] += s[b].second[i];
    }
}

// Gradient of the scaled loss with respect to both heads' logits, plus the
// scaled loss itself.
struct HeadGrad {
    double loss = 0.0;
    double dHelp = 0.0;
    std::array<double, kReasonCount> dReason{};
};

HeadGrad head_grad(double help, const std::array<double, kReasonCount>& reasons, const FusionExample& ex, LossWeights w,
                   double scale) {
    HeadGrad h;
    const double y = ex.helpful ? 1.0 : 0.0;
    h.loss = w.alpha * bce_with_logit(help, y);
    h.dHelp = scale * w.alpha * (sigmoid(help) - y);
    double reasonLoss = 0.0;
    for (std::size_t j = 0; j < kReasonCount; ++j) {
        const double yj = ex.reasons.test(j) ? 1.0 : 0.0;
        reasonLoss += bce_with_logit(reasons[j], yj);
        h.dReason[j] = scale * w.beta * (sigmoid(reasons[j]) - yj) / static_cast<double>(kReasonCount);
    }
    h.loss += w.beta * reasonLoss / static_cast<double>(kReasonCount);
    h.loss *= scale;
    return h;
}

}  // namespace

namespace parallel {

double fusion_loss_grad(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                        std::span<const FusionExample> batch, LossWeights w, FusionModel* grad) {
    const std::size_t d = model.dim, dh = model.head_dim(), H = model.heads, n = reasonEmbs.size();
    const double invSqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const double scale = 1.0 / static_cast<double>(batch.size());

    std::vector<double> kp(n * d), vp(n * d);
    for (std::size_t m = 0; m < n; ++m) {
        row_times(reasonEmbs[m], model.wk, d, kp.data() + m * d);
        row_times(reasonEmbs[m], model.wv, d, vp.data() + m * d);
    }

    struct Partial {
        double loss = 0.0;
        FusionModel g;
        std::vector<double> dkp, dvp;
    };
    const std::size_t blocks = (batch.size() + kFusionBlock - 1) / kFusionBlock;
    std::vector<Partial> partials(blocks);

#pragma omp parallel
    {
        std::vector<double> q(d), a(n), o(d), f(d), z(2 * d), dz(2 * d), dO(d), dq(d), da(n);
        std::vector<double> weights(H * n);  // kept for the backward pass
#pragma omp for schedule(static)
        for (std::size_t b = 0; b < blocks; ++b) {
            Partial& part = partials[b];
            if (grad) {
                zero_like(model, part.g);
                part.dkp.assign(n * d, 0.0);
                part.dvp.assign(n * d, 0.0);
            }
            const std::size_t end = std::min(batch.size(), (b + 1) * kFusionBlock);
            for (std::size_t e = b * kFusionBlock; e < end; ++e) {
                const auto& x = batch[e].note;
                row_times(x, model.wq, d, q.data());
                for (std::size_t t = 0; t < H; ++t) {
                    double mx = -INFINITY;
                    for (std::size_t m = 0; m < n; ++m) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) s += q[t * dh + c] * kp[m * d + t * dh + c];
                        a[m] = s * invSqrt;
                        mx = std::max(mx, a[m]);
                    }
                    double total = 0.0;
                    for (std::size_t m = 0; m < n; ++m) {
                        a[m] = std::exp(a[m] - mx);
                        total += a[m];
                    }
                    for (std::size_t m = 0; m < n; ++m) weights[t * n + m] = a[m] / total;
                    for (std::size_t c = 0; c < dh; ++c) {
                        double s = 0.0;
                        for (std::size_t m = 0; m < n; ++m) s += weights[t * n + m] * vp[m * d + t * dh + c];
                        o[t * dh + c] = s;
                    }
                }
                row_times(o, model.wo, d, f.data());
                std::copy(x.begin(), x.end(), z.begin());
                std::copy(f.begin(), f.end(), z.begin() + static_cast<std::ptrdiff_t>(d));

                double help = model.helpB;
                for (std::size_t i = 0; i < 2 * d; ++i) help += z[i] * model.helpW[i];
                std::array<double, kReasonCount> rl{};
                for (std::size_t j = 0; j < kReasonCount; ++j) rl[j] = model.reasonB[j];
                for (std::size_t i = 0; i < 2 * d; ++i) {
                    for (std::size_t j = 0; j < kReasonCount; ++j) rl[j] += z[i] * model.reasonW[i * kReasonCount + j];
                }
                const auto hg = head_grad(help, rl, batch[e], w, scale);
                part.loss += hg.loss;
                if (!grad) continue;

                FusionModel& g = part.g;
                g.helpB += hg.dHelp;
                for (std::size_t j = 0; j < kReasonCount; ++j) g.reasonB[j] += hg.dReason[j];
                for (std::size_t i = 0; i < 2 * d; ++i) {
                    g.helpW[i] += z[i] * hg.dHelp;
                    double s = model.helpW[i] * hg.dHelp;
                    for (std::size_t j = 0; j < kReasonCount; ++j) {
                        g.reasonW[i * kReasonCount + j] += z[i] * hg.dReason[j];
                        s += model.reasonW[i * kReasonCount + j] * hg.dReason[j];
                    }
                    dz[i] = s;
                }
                const double* df = dz.data() + d;
                for (std::size_t i = 0; i < d; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        g.wo[i * d + j] += o[i] * df[j];
                        s += model.wo[i * d + j] * df[j];
                    }
                    dO[i] = s;
                }
                for (std::size_t t = 0; t < H; ++t) {
                    const double* wt = weights.data() + t * n;
                    double dot = 0.0;
                    for (std::size_t m = 0; m < n; ++m) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) {
                            s += dO[t * dh + c] * vp[m * d + t * dh + c];
                            part.dvp[m * d + t * dh + c] += wt[m] * dO[t * dh + c];
                        }
                        da[m] = s;
                        dot += wt[m] * s;
                    }
                    for (std::size_t c = 0; c < dh; ++c) dq[t * dh + c] = 0.0;
                    for (std::size_t m = 0; m < n; ++m) {
                        const double ds = wt[m] * (da[m] - dot) * invSqrt;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dq[t * dh + c] += ds * kp[m * d + t * dh + c];
                            part.dkp[m * d + t * dh + c] += ds * q[t * dh + c];
                        }
                    }
                }
                for (std::size_t i = 0; i < d; ++i) {
                    for (std::size_t c = 0; c < d; ++c) g.wq[i * d + c] += x[i] * dq[c];
                }
            }
        }
    }

    double loss = 0.0;
    for (const auto& p : partials) loss += p.loss;
    if (!grad) return loss;

    zero_like(model, *grad);
    std::vector<double> dkp(n * d, 0.0), dvp(n * d, 0.0);
    for (const auto& p : partials) {
        add_into(*grad, p.g);
        for (std::size_t i = 0; i < n * d; ++i) {
            dkp[i] += p.dkp[i];
            dvp[i] += p.dvp[i];
        }
    }
    for (std::size_t m = 0; m < n; ++m) {
        for (std::size_t i = 0; i < d; ++i) {
            const double km = reasonEmbs[m][i];
            for (std::size_t c = 0; c < d; ++c) {
                grad->wk[i * d + c] += km * dkp[m * d + c];
                grad->wv[i * d + c] += km * dvp[m * d + c];
            }
        }
    }
    return loss;
}

}  // namespace parallel

namespace reference {

double fusion_loss_grad(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                        std::span<const FusionExample> batch, LossWeights w, FusionModel* grad) {
    const std::size_t d = model.dim, dh = model.head_dim(), H = model.heads, n = reasonEmbs.size();
    const double scale = 1.0 / static_cast<double>(batch.size());
    if (grad) zero_like(model, *grad);
    double loss = 0.0;

    for (const auto& ex : batch) {
        const auto& x = ex.note;
        std::vector<double> q(d, 0.0), o(d, 0.0), f(d, 0.0);
        std::vector<std::vector<double>> k(n, std::vector<double>(d, 0.0)), v = k;
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t i = 0; i < d; ++i) q[c] += x[i] * model.wq[i * d + c];
        }
        for (std::size_t m = 0; m < n; ++m) {
            for (std::size_t c = 0; c < d; ++c) {
                for (std::size_t i = 0; i < d; ++i) {
                    k[m][c] += reasonEmbs[m][i] * model.wk[i * d + c];
                    v[m][c] += reasonEmbs[m][i] * model.wv[i * d + c];
                }
            }
        }
        std::vector<std::vector<double>> att(H, std::vector<double>(n));
        for (std::size_t t = 0; t < H; ++t) {
            std::vector<double> s(n, 0.0);
            for (std::size_t m = 0; m < n; ++m) {
                for (std::size_t c = t * dh; c < (t + 1) * dh; ++c) s[m] += q[c] * k[m][c];
                s[m] /= std::sqrt(static_cast<double>(dh));
            }
            const double mx = *std::max_element(s.begin(), s.end());
            double total = 0.0;
            for (std::size_t m = 0; m < n; ++m) total += std::exp(s[m] - mx);
            for (std::size_t m = 0; m < n; ++m) att[t][m] = std::exp(s[m] - mx) / total;
            for (std::size_t c = t * dh; c < (t + 1) * dh; ++c) {
                for (std::size_t m = 0; m < n; ++m) o[c] += att[t][m] * v[m][c];
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t i = 0; i < d; ++i) f[j] += o[i] * model.wo[i * d + j];
        }
        std::vector<double> z(x.begin(), x.end());
        z.insert(z.end(), f.begin(), f.end());
        double help = model.helpB;
        std::array<double, kReasonCount> rl{};
        for (std::size_t i = 0; i < 2 * d; ++i) help += model.helpW[i] * z[i];
        for (std::size_t j = 0; j < kReasonCount; ++j) {
            rl[j] = model.reasonB[j];
            for (std::size_t i = 0; i < 2 * d; ++i) rl[j] += model.reasonW[i * kReasonCount + j] * z[i];
        }
        const auto hg = head_grad(help, rl, ex, w, scale);
        loss += hg.loss;
        if (!grad) continue;

        FusionModel& g = *grad;
        std::vector<double> dz(2 * d, 0.0);
        g.helpB += hg.dHelp;
        for (std::size_t i = 0; i < 2 * d; ++i) {
            g.helpW[i] += hg.dHelp * z[i];
            dz[i] += hg.dHelp * model.helpW[i];
        }
        for (std::size_t j = 0; j < kReasonCount; ++j) {
            g.reasonB[j] += hg.dReason[j];
            for (std::size_t i = 0; i < 2 * d; ++i) {
                g.reasonW[i * kReasonCount + j] += hg.dReason[j] * z[i];
                dz[i] += hg.dReason[j] * model.reasonW[i * kReasonCount + j];
            }
        }
        std::vector<double> dO(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                g.wo[i * d + j] += o[i] * dz[d + j];
                dO[i] += model.wo[i * d + j] * dz[d + j];
            }
        }
        std::vector<double> dq(d, 0.0);
        std::vector<std::vector<double>> dk(n, std::vector<double>(d, 0.0)), dv = dk;
        for (std::size_t t = 0; t < H; ++t) {
            std::vector<double> da(n, 0.0);
            for (std::size_t m = 0; m < n; ++m) {
                for (std::size_t c = t * dh; c < (t + 1) * dh; ++c) {
                    da[m] += dO[c] * v[m][c];
                    dv[m][c] += att[t][m] * dO[c];
                }
            }
            for (std::size_t m = 0; m < n; ++m) {
                // softmax Jacobian: ds_m = a_m (da_m - sum_l a_l da_l)
                double ds = 0.0;
                for (std::size_t l = 0; l < n; ++l) ds += ((l == m ? 1.0 : 0.0) - att[t][l]) * da[l];
                ds *= att[t][m] / std::sqrt(static_cast<double>(dh));
                for (std::size_t c = t * dh; c < (t + 1) * dh; ++c) {
                    dq[c] += ds * k[m][c];
                    dk[m][c] += ds * q[c];
                }
            }
        }
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                g.wq[i * d + c] += x[i] * dq[c];
                for (std::size_t m = 0; m < n; ++m) {
                    g.wk[i * d + c] += reasonEmbs[m][i] * dk[m][c];
                    g.wv[i * d + c] += reasonEmbs[m][i] * dv[m][c];
                }
            }
        }
    }
    return loss;
}

}  // namespace reference

}  // namespace notehelp::kernels
