#include "dit_dense.hpp"

#include <cmath>
#include <string>

#include "error.hpp"

namespace ras {

namespace {

Matrix gemm_tn(const Matrix& a, const Matrix& b) { return gemm(transpose(a), b); }
Matrix gemm_nt(const Matrix& a, const Matrix& b) { return gemm(a, transpose(b)); }

void add_into(Matrix& dst, const Matrix& src) {
    float* d = dst.data();
    const float* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void colsum_into(Matrix& bias_grad, const Matrix& g) {
    float* b = bias_grad.data();
    for (std::size_t r = 0; r < g.rows(); ++r) {
        const float* row = g.data() + r * g.cols();
        for (std::size_t c = 0; c < g.cols(); ++c) b[c] += row[c];
    }
}

// Per-sample vectors (B x width) broadcast over that sample's P rows.
const float* sample_vec(const Matrix& m, std::size_t row, std::size_t per_sample,
                        std::size_t offset) {
    return m.data() + (row / per_sample) * m.cols() + offset;
}

}  // namespace

Matrix dense_forward(const DitModel& model, const Matrix& patches, std::span<const float> sigmas,
                     std::span<const std::int32_t> classes, DenseTape* tape) {
    const auto& cfg = model.config();
    const auto& w = model.weights();
    const std::size_t B = sigmas.size(), P = cfg.num_patches(), d = cfg.hidden_dim;
    const std::size_t dh = cfg.head_dim(), H = cfg.heads, rows = B * P;
    require(patches.rows() == rows && patches.cols() == cfg.patch_dim(), ErrorKind::Shape,
            "dense_forward: patch matrix shape mismatch");
    require(classes.size() == B, ErrorKind::Shape, "dense_forward: one class per sample");

    Matrix feats(B, ModelConfig::kTimestepFeatures);
    for (std::size_t b = 0; b < B; ++b) {
        const auto f = ops::timestep_features(sigmas[b], ModelConfig::kTimestepFeatures);
        std::copy(f.begin(), f.end(), feats.row(b).begin());
    }
    Matrix t1 = gemm(feats, w.t1_w);
    add_row_bias(t1, w.t1_b);
    Matrix a1 = t1;
    for (float& v : a1.flat()) v = ops::silu(v);
    Matrix c = gemm(a1, w.t2_w);
    add_row_bias(c, w.t2_b);
    for (std::size_t b = 0; b < B; ++b) {
        if (cfg.num_classes > 0) {
            const std::int32_t y = classes[b];
            require(y >= 0 && static_cast<std::uint32_t>(y) < cfg.num_classes,
                    ErrorKind::InvalidArgument, "class id out of range");
            const float* e = w.class_embed.data() + y * d;
            for (std::size_t j = 0; j < d; ++j) c(b, j) += e[j];
        }
    }
    Matrix sc = c;
    for (float& v : sc.flat()) v = ops::silu(v);

    Matrix h = gemm(patches, w.embed_w);
    add_row_bias(h, w.embed_b);

    if (tape) {
        tape->batch = B;
        tape->patches = patches;
        tape->feats = feats;
        tape->t1 = t1;
        tape->a1 = a1;
        tape->c = c;
        tape->sc = sc;
        tape->classes.assign(classes.begin(), classes.end());
        tape->layers.assign(cfg.layers, {});
    }

    std::vector<ops::GridPos> pos(P);
    for (std::uint32_t p = 0; p < P; ++p) pos[p] = model.position(p);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Matrix n1(rows, d), u(rows, d), n2(rows, d), u2(rows, d), o(rows, d);
    std::vector<float> inv1(rows), inv2(rows);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const LayerWeights& lw = w.layers[l];
        Matrix mod = gemm(sc, lw.ada_w);
        add_row_bias(mod, lw.ada_b);
        Matrix h_in;
        if (tape) h_in = h;

        for (std::size_t r = 0; r < rows; ++r) {
            inv1[r] = ops::rms_norm(h.row(r), n1.row(r));
            ops::modulate(n1.row(r), sample_vec(mod, r, P, 0), sample_vec(mod, r, P, d), u.row(r));
        }
        Matrix q = gemm(u, lw.wq);
        Matrix k = gemm(u, lw.wk);
        Matrix v = gemm(u, lw.wv);
        for (std::size_t r = 0; r < rows; ++r) {
            model.rope().apply(q.row(r), pos[r % P]);
            model.rope().apply(k.row(r), pos[r % P]);
        }
        Matrix probs;
        if (tape) probs = Matrix(B * H * P, P);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t hd = 0; hd < H; ++hd) {
                const std::size_t off = b * P * d + hd * dh;
                ops::attend(q.data() + off, d, P, k.data() + off, v.data() + off, d, P, dh, scale,
                            o.data() + off, d, tape ? probs.data() + (b * H + hd) * P * P : nullptr);
            }
        }
        Matrix a = gemm(o, lw.proj_w);
        add_row_bias(a, lw.proj_b);
        for (std::size_t r = 0; r < rows; ++r) {
            ops::gated_residual(h.row(r), sample_vec(mod, r, P, 2 * d), a.row(r));
        }
        Matrix h1;
        if (tape) h1 = h;

        for (std::size_t r = 0; r < rows; ++r) {
            inv2[r] = ops::rms_norm(h.row(r), n2.row(r));
            ops::modulate(n2.row(r), sample_vec(mod, r, P, 3 * d), sample_vec(mod, r, P, 4 * d),
                          u2.row(r));
        }
        Matrix z = gemm(u2, lw.mlp1_w);
        add_row_bias(z, lw.mlp1_b);
        Matrix g = z;
        for (float& x : g.flat()) x = ops::gelu(x);
        Matrix m = gemm(g, lw.mlp2_w);
        add_row_bias(m, lw.mlp2_b);
        for (std::size_t r = 0; r < rows; ++r) {
            ops::gated_residual(h.row(r), sample_vec(mod, r, P, 5 * d), m.row(r));
        }
        if (!all_finite(h.flat())) {
            fail(ErrorKind::Numeric, "non-finite activation in layer " + std::to_string(l));
        }
        if (tape) {
            DenseLayerTape& t = tape->layers[l];
            t.h_in = std::move(h_in);
            t.n1 = n1;
            t.u = u;
            t.mod = std::move(mod);
            t.q = std::move(q);
            t.k = std::move(k);
            t.v = std::move(v);
            t.probs = std::move(probs);
            t.o = o;
            t.a = std::move(a);
            t.h1 = std::move(h1);
            t.n2 = n2;
            t.u2 = u2;
            t.z = std::move(z);
            t.g = std::move(g);
            t.m = std::move(m);
            t.inv_rms1 = inv1;
            t.inv_rms2 = inv2;
        }
    }

    Matrix fm = gemm(sc, w.final_ada_w);
    add_row_bias(fm, w.final_ada_b);
    Matrix nf(rows, d), uf(rows, d);
    std::vector<float> invf(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        invf[r] = ops::rms_norm(h.row(r), nf.row(r));
        ops::modulate(nf.row(r), sample_vec(fm, r, P, 0), sample_vec(fm, r, P, d), uf.row(r));
    }
    Matrix out = gemm(uf, w.final_w);
    add_row_bias(out, w.final_b);
    if (tape) {
        tape->h_last = std::move(h);
        tape->nf = std::move(nf);
        tape->fm = std::move(fm);
        tape->uf = std::move(uf);
        tape->inv_rmsf = std::move(invf);
    }
    return out;
}

void dense_backward(const DitModel& model, const DenseTape& tape, const Matrix& d_out,
                    DitWeights& grads) {
    const auto& cfg = model.config();
    const auto& w = model.weights();
    const std::size_t B = tape.batch, P = cfg.num_patches(), d = cfg.hidden_dim;
    const std::size_t hdim = cfg.head_dim(), H = cfg.heads, rows = B * P;
    require(d_out.rows() == rows && d_out.cols() == cfg.patch_dim(), ErrorKind::Shape,
            "dense_backward: gradient shape mismatch");
    const float scale = 1.0f / std::sqrt(static_cast<float>(hdim));

    // Final layer.
    add_into(grads.final_w, gemm_tn(tape.uf, d_out));
    colsum_into(grads.final_b, d_out);
    Matrix duf = gemm_nt(d_out, w.final_w);
    Matrix dfm(B, 2 * d);
    Matrix dh(rows, d);
    {
        std::vector<float> dn(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t b = r / P;
            const float* scl = tape.fm.data() + b * 2 * d + d;
            for (std::size_t j = 0; j < d; ++j) {
                const float g = duf(r, j);
                dfm(b, j) += g;
                dfm(b, d + j) += g * tape.nf(r, j);
                dn[j] = g * (1.0f + scl[j]);
            }
            ops::rms_norm_backward(tape.h_last.row(r), tape.inv_rmsf[r], dn, dh.row(r));
        }
    }
    add_into(grads.final_ada_w, gemm_tn(tape.sc, dfm));
    colsum_into(grads.final_ada_b, dfm);
    Matrix dsc = gemm_nt(dfm, w.final_ada_w);

    std::vector<ops::GridPos> pos(P);
    for (std::uint32_t p = 0; p < P; ++p) pos[p] = model.position(p);

    for (std::size_t li = cfg.layers; li-- > 0;) {
        const LayerWeights& lw = w.layers[li];
        LayerWeights& lg = grads.layers[li];
        const DenseLayerTape& t = tape.layers[li];
        Matrix dmod(B, 6 * d);

        // h2 = h1 + gate_m * m
        Matrix dm(rows, d);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t b = r / P;
            const float* gate = t.mod.data() + b * 6 * d + 5 * d;
            for (std::size_t j = 0; j < d; ++j) {
                dmod(b, 5 * d + j) += dh(r, j) * t.m(r, j);
                dm(r, j) = dh(r, j) * gate[j];
            }
        }
        add_into(lg.mlp2_w, gemm_tn(t.g, dm));
        colsum_into(lg.mlp2_b, dm);
        Matrix dz = gemm_nt(dm, lw.mlp2_w);
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] *= ops::gelu_grad(t.z.data()[i]);
        add_into(lg.mlp1_w, gemm_tn(t.u2, dz));
        colsum_into(lg.mlp1_b, dz);
        Matrix du2 = gemm_nt(dz, lw.mlp1_w);
        {
            std::vector<float> dn(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t b = r / P;
                const float* scl = t.mod.data() + b * 6 * d + 4 * d;
                for (std::size_t j = 0; j < d; ++j) {
                    const float g = du2(r, j);
                    dmod(b, 3 * d + j) += g;
                    dmod(b, 4 * d + j) += g * t.n2(r, j);
                    dn[j] = g * (1.0f + scl[j]);
                }
                ops::rms_norm_backward(t.h1.row(r), t.inv_rms2[r], dn, dh.row(r));
            }
        }

        // h1 = h + gate_a * a
        Matrix da(rows, d);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t b = r / P;
            const float* gate = t.mod.data() + b * 6 * d + 2 * d;
            for (std::size_t j = 0; j < d; ++j) {
                dmod(b, 2 * d + j) += dh(r, j) * t.a(r, j);
                da(r, j) = dh(r, j) * gate[j];
            }
        }
        add_into(lg.proj_w, gemm_tn(t.o, da));
        colsum_into(lg.proj_b, da);
        Matrix dout = gemm_nt(da, lw.proj_w);

        Matrix dq(rows, d), dk(rows, d), dv(rows, d);
        {
            std::vector<float> dp(P), vt(hdim * P);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t hd = 0; hd < H; ++hd) {
                    const float* pr = t.probs.data() + (b * H + hd) * P * P;
                    const std::size_t base = b * P;
                    const std::size_t col = hd * hdim;
                    for (std::size_t j = 0; j < P; ++j)
                        for (std::size_t e = 0; e < hdim; ++e)
                            vt[e * P + j] = t.v.data()[(base + j) * d + col + e];
                    for (std::size_t i = 0; i < P; ++i) {
                        const float* doi = dout.data() + (base + i) * d + col;
                        const float* pi = pr + i * P;
                        // dP = dO V^T, dV += P^T dO
                        for (std::size_t j = 0; j < P; ++j) dp[j] = 0.0f;
                        for (std::size_t e = 0; e < hdim; ++e) {
                            const float de = doi[e];
                            const float* row = vt.data() + e * P;
                            for (std::size_t j = 0; j < P; ++j) dp[j] += de * row[j];
                        }
                        float rowdot = 0.0f;
                        for (std::size_t j = 0; j < P; ++j) rowdot += dp[j] * pi[j];
                        for (std::size_t j = 0; j < P; ++j) {
                            float* dvj = dv.data() + (base + j) * d + col;
                            for (std::size_t e = 0; e < hdim; ++e) dvj[e] += pi[j] * doi[e];
                        }
                        // dS = P * (dP - rowdot), scores = scale * q.k
                        const float* qi = t.q.data() + (base + i) * d + col;
                        float* dqi = dq.data() + (base + i) * d + col;
                        for (std::size_t j = 0; j < P; ++j) {
                            const float ds = pi[j] * (dp[j] - rowdot) * scale;
                            const float* kj = t.k.data() + (base + j) * d + col;
                            float* dkj = dk.data() + (base + j) * d + col;
                            for (std::size_t e = 0; e < hdim; ++e) {
                                dqi[e] += ds * kj[e];
                                dkj[e] += ds * qi[e];
                            }
                        }
                    }
                }
            }
        }
        for (std::size_t r = 0; r < rows; ++r) {
            model.rope().apply(dq.row(r), pos[r % P], true);
            model.rope().apply(dk.row(r), pos[r % P], true);
        }
        add_into(lg.wq, gemm_tn(t.u, dq));
        add_into(lg.wk, gemm_tn(t.u, dk));
        add_into(lg.wv, gemm_tn(t.u, dv));
        Matrix du = gemm_nt(dq, lw.wq);
        add_into(du, gemm_nt(dk, lw.wk));
        add_into(du, gemm_nt(dv, lw.wv));
        {
            std::vector<float> dn(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t b = r / P;
                const float* scl = t.mod.data() + b * 6 * d + d;
                for (std::size_t j = 0; j < d; ++j) {
                    const float g = du(r, j);
                    dmod(b, j) += g;
                    dmod(b, d + j) += g * t.n1(r, j);
                    dn[j] = g * (1.0f + scl[j]);
                }
                ops::rms_norm_backward(t.h_in.row(r), t.inv_rms1[r], dn, dh.row(r));
            }
        }
        add_into(lg.ada_w, gemm_tn(tape.sc, dmod));
        colsum_into(lg.ada_b, dmod);
        add_into(dsc, gemm_nt(dmod, lw.ada_w));
    }

    // Patch embedding.
    add_into(grads.embed_w, gemm_tn(tape.patches, dh));
    colsum_into(grads.embed_b, dh);

    // Conditioning: sc = silu(c), c = t2 + class_embed[y].
    Matrix dc = dsc;
    for (std::size_t i = 0; i < dc.size(); ++i) dc.data()[i] *= ops::silu_grad(tape.c.data()[i]);
    if (cfg.num_classes > 0) {
        for (std::size_t b = 0; b < B; ++b) {
            float* e = grads.class_embed.data() + tape.classes[b] * d;
            for (std::size_t j = 0; j < d; ++j) e[j] += dc(b, j);
        }
    }
    add_into(grads.t2_w, gemm_tn(tape.a1, dc));
    colsum_into(grads.t2_b, dc);
    Matrix dt1 = gemm_nt(dc, w.t2_w);
    for (std::size_t i = 0; i < dt1.size(); ++i) dt1.data()[i] *= ops::silu_grad(tape.t1.data()[i]);
    add_into(grads.t1_w, gemm_tn(tape.feats, dt1));
    colsum_into(grads.t1_b, dt1);
}

Image dense_predict(const DitModel& model, const Image& sample, float sigma, std::int32_t class_id) {
    const auto& cfg = model.config();
    const IndexSet all = IndexSet::all(cfg.num_patches());
    Matrix patches = extract_patches(cfg, sample, all.span());
    const float sigmas[1] = {sigma};
    const std::int32_t classes[1] = {class_id};
    Matrix out = dense_forward(model, patches, sigmas, classes);
    Image img = image_for(cfg);
    unpatchify(cfg, out, all, img);
    return img;
}

}  // namespace ras
