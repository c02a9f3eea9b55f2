/*
 * Kernel bodies, included once per precision from _lstm.c with `real`,
 * SFX, TANH and SIGMOID defined.
 */
#define CAT_(a, b) a##_##b
#define CAT(a, b) CAT_(a, b)

void CAT(lstm_forward, SFX)(int T, int BP, int H,
                            const real *restrict x, const real *restrict wx,
                            const real *restrict wh, const real *restrict b,
                            const real *restrict fcw, real fcb, int residual,
                            real *restrict acts, real *restrict hs,
                            real *restrict cs, long ks, long ts,
                            real *restrict y)
{
    /* state element (t, k, lane) lives at hs[t * ts + k * ks + lane] */
    const int G = 4 * H;
    const size_t GB = (size_t)G * BP;
    for (int n0 = 0; n0 < BP; n0 += LANES) {
        for (int t = 0; t < T; t++) {
            const real *xt = x + (size_t)t * BP + n0;
            size_t cur = acts ? (size_t)t : (size_t)(t & 1);
            size_t nxt = acts ? (size_t)t + 1 : (size_t)((t + 1) & 1);
            const real *h = hs + cur * ts + n0;
            const real *c = cs + cur * ts + n0;
            real *hn = hs + nxt * ts + n0;
            real *cn = cs + nxt * ts + n0;
            real pre[4][LANES];
            real out[LANES];
            for (int n = 0; n < LANES; n++)
                out[n] = fcb + (residual ? xt[n] : (real)0);
            for (int k = 0; k < H; k++) {
                /* rows i, f, g, o of unit k are j = k, H+k, 2H+k, 3H+k */
                for (int q = 0; q < 4; q++) {
                    int j = q * H + k;
                    for (int n = 0; n < LANES; n++)
                        pre[q][n] = b[j] + wx[j] * xt[n];
                }
                const real *w0 = wh + (size_t)k * H;
                const real *w1 = wh + (size_t)(H + k) * H;
                const real *w2 = wh + (size_t)(2 * H + k) * H;
                const real *w3 = wh + (size_t)(3 * H + k) * H;
                for (int m = 0; m < H; m++) {
                    const real *hm = h + (size_t)m * ks;
                    real a0 = w0[m], a1 = w1[m], a2 = w2[m], a3 = w3[m];
                    for (int n = 0; n < LANES; n++) {
                        real hv = hm[n];
                        pre[0][n] += a0 * hv;
                        pre[1][n] += a1 * hv;
                        pre[2][n] += a2 * hv;
                        pre[3][n] += a3 * hv;
                    }
                }
                const real *ck = c + (size_t)k * ks;
                real *cnk = cn + (size_t)k * ks;
                real *hnk = hn + (size_t)k * ks;
                real fk = fcw[k];
                for (int n = 0; n < LANES; n++) {
                    real ig = SIGMOID(pre[0][n]);
                    real fg = SIGMOID(pre[1][n]);
                    real gg = TANH(pre[2][n]);
                    real og = SIGMOID(pre[3][n]);
                    real cc = fg * ck[n] + ig * gg;
                    real hh = og * TANH(cc);
                    cnk[n] = cc;
                    hnk[n] = hh;
                    out[n] += fk * hh;
                    pre[0][n] = ig;
                    pre[1][n] = fg;
                    pre[2][n] = gg;
                    pre[3][n] = og;
                }
                if (acts) {
                    real *a = acts + (size_t)t * GB + n0;
                    for (int q = 0; q < 4; q++) {
                        real *aq = a + (size_t)(q * H + k) * BP;
                        for (int n = 0; n < LANES; n++)
                            aq[n] = pre[q][n];
                    }
                }
            }
            real *yt = y + (size_t)t * BP + n0;
            for (int n = 0; n < LANES; n++)
                yt[n] = out[n];
        }
    }
}

/* acc[j][k] += sum_l a[j][l] * b[k][l] over rows of length len (a multiple
   of LANES); rows of a and b are spaced by stride. Sums run lane-parallel
   and are reduced once at the end, so the order is fixed and vectorizable
   without reassociation. */
static void CAT(accum_abt, SFX)(int J, int K, int len, long stride,
                                const real *restrict a,
                                const real *restrict b, real *restrict acc)
{
    for (int j = 0; j < J; j += 4) {
        int jj = J - j < 4 ? J - j : 4;
        for (int k = 0; k < K; k += 4) {
            int kk = K - k < 4 ? K - k : 4;
            real s[4][4][LANES];
            memset(s, 0, sizeof s);
            if (jj == 4 && kk == 4) {
                for (int l = 0; l < len; l += LANES)
                    for (int p = 0; p < 4; p++) {
                        const real *ap = a + (size_t)(j + p) * stride + l;
                        for (int q = 0; q < 4; q++) {
                            const real *bq = b + (size_t)(k + q) * stride + l;
                            for (int n = 0; n < LANES; n++)
                                s[p][q][n] += ap[n] * bq[n];
                        }
                    }
            } else {
                for (int l = 0; l < len; l += LANES)
                    for (int p = 0; p < jj; p++) {
                        const real *ap = a + (size_t)(j + p) * stride + l;
                        for (int q = 0; q < kk; q++) {
                            const real *bq = b + (size_t)(k + q) * stride + l;
                            for (int n = 0; n < LANES; n++)
                                s[p][q][n] += ap[n] * bq[n];
                        }
                    }
            }
            for (int p = 0; p < jj; p++)
                for (int q = 0; q < kk; q++) {
                    real t = 0;
                    for (int n = 0; n < LANES; n++)
                        t += s[p][q][n];
                    acc[(size_t)(j + p) * K + k + q] += t;
                }
        }
    }
}

/* acc[j] += sum_l a[j][l], lane-parallel like accum_abt */
static void CAT(accum_rows, SFX)(int J, int len, long stride,
                                 const real *restrict a, real *restrict acc)
{
    for (int j = 0; j < J; j++) {
        real s[LANES];
        memset(s, 0, sizeof s);
        const real *aj = a + (size_t)j * stride;
        for (int l = 0; l < len; l += LANES)
            for (int n = 0; n < LANES; n++)
                s[n] += aj[l + n];
        real t = 0;
        for (int n = 0; n < LANES; n++)
            t += s[n];
        acc[j] += t;
    }
}

/*
 * Reverse-time sweep. dy is dL/dy_hat; gradients are accumulated (+=) into
 * dwx[4H], dwh[4H][H], db[4H], dfcw[H], dfcb[1] which the caller zeroes.
 * The initial state gets no gradient (truncation boundary).
 *
 * Gate gradients, h[t-1] and x[t] are staged per block of TBLK steps in
 * gblk [4H][BL], hblk [H][BL] and xblk [BL], BL = (TBLK + 1) * LANES, so the
 * weight contractions run out of cache.
 */
void CAT(lstm_backward, SFX)(int T, int BP, int H, const real *restrict x,
                             const real *restrict wh,
                             const real *restrict fcw,
                             const real *restrict acts,
                             const real *restrict hs,
                             const real *restrict cs, long ks, long ts,
                             const real *restrict dy, real *restrict dwx,
                             real *restrict dwh, real *restrict db,
                             real *restrict dfcw, real *restrict dfcb,
                             real *restrict gblk, real *restrict hblk,
                             real *restrict xblk)
{
    const int G = 4 * H;
    const size_t GB = (size_t)G * BP;
    /* staged row stride; the extra lane tile keeps the 4H rows from
       mapping onto the same few L1 sets */
    const long BL = (long)TBLK * LANES + LANES;
    real dh[H][LANES], dc[H][LANES], fcacc[H][LANES], fcbacc[LANES];

    memset(fcacc, 0, sizeof fcacc);
    memset(fcbacc, 0, sizeof fcbacc);
    for (int n0 = 0; n0 < BP; n0 += LANES) {
        memset(dh, 0, sizeof dh);
        memset(dc, 0, sizeof dc);
        int filled = 0;
        for (int t = T - 1; t >= 0; t--) {
            const real *dyt = dy + (size_t)t * BP + n0;
            const real *a = acts + (size_t)t * GB + n0;
            const real *hprev = hs + (size_t)t * ts + n0;
            const real *hnow = hs + (size_t)(t + 1) * ts + n0;
            const real *cprev = cs + (size_t)t * ts + n0;
            const real *cnow = cs + (size_t)(t + 1) * ts + n0;
            /* staged columns run backwards in time; order is irrelevant to
               the sums but fixed, so results stay deterministic */
            const size_t slot = (size_t)filled * LANES;
            const real *xt = x + (size_t)t * BP + n0;
            for (int n = 0; n < LANES; n++) {
                xblk[slot + n] = xt[n];
                fcbacc[n] += dyt[n];
            }
            for (int k = 0; k < H; k++) {
                const real *ai = a + (size_t)k * BP;
                const real *af = a + (size_t)(H + k) * BP;
                const real *ag = a + (size_t)(2 * H + k) * BP;
                const real *ao = a + (size_t)(3 * H + k) * BP;
                const real *ckn = cnow + (size_t)k * ks;
                const real *ckp = cprev + (size_t)k * ks;
                const real *hkn = hnow + (size_t)k * ks;
                const real *hkp = hprev + (size_t)k * ks;
                real fk = fcw[k];
                real gt[4][LANES], hp[LANES];
                for (int n = 0; n < LANES; n++) {
                    real tc = TANH(ckn[n]);
                    real hgrad = dh[k][n] + dyt[n] * fk;
                    real ig = ai[n], fg = af[n], cg = ag[n], og = ao[n];
                    real cgrad = dc[k][n] + hgrad * og * ((real)1 - tc * tc);
                    gt[0][n] = cgrad * cg * ig * ((real)1 - ig);
                    gt[1][n] = cgrad * ckp[n] * fg * ((real)1 - fg);
                    gt[2][n] = cgrad * ig * ((real)1 - cg * cg);
                    gt[3][n] = hgrad * tc * og * ((real)1 - og);
                    dc[k][n] = cgrad * fg;
                    hp[n] = hkp[n];
                    fcacc[k][n] += dyt[n] * hkn[n];
                }
                for (int q = 0; q < 4; q++) {
                    real *row = gblk + (size_t)(q * H + k) * BL + slot;
                    for (int n = 0; n < LANES; n++)
                        row[n] = gt[q][n];
                }
                real *hb = hblk + (size_t)k * BL + slot;
                for (int n = 0; n < LANES; n++)
                    hb[n] = hp[n];
            }
            /* dh_prev[m] = sum_j wh[j][m] * dgate[j], four units at a time */
            for (int m = 0; m < H; m += 4) {
                int mm = H - m < 4 ? H - m : 4;
                real acc[4][LANES];
                for (int q = 0; q < 4; q++)
                    for (int n = 0; n < LANES; n++)
                        acc[q][n] = 0;
                if (mm == 4) {
                    for (int j = 0; j < G; j++) {
                        const real *gj = gblk + (size_t)j * BL + slot;
                        const real *wj = wh + (size_t)j * H + m;
                        real a0 = wj[0], a1 = wj[1], a2 = wj[2], a3 = wj[3];
                        for (int n = 0; n < LANES; n++) {
                            real gv = gj[n];
                            acc[0][n] += a0 * gv;
                            acc[1][n] += a1 * gv;
                            acc[2][n] += a2 * gv;
                            acc[3][n] += a3 * gv;
                        }
                    }
                } else {
                    for (int j = 0; j < G; j++) {
                        const real *gj = gblk + (size_t)j * BL + slot;
                        for (int q = 0; q < mm; q++) {
                            real w = wh[(size_t)j * H + m + q];
                            for (int n = 0; n < LANES; n++)
                                acc[q][n] += w * gj[n];
                        }
                    }
                }
                for (int q = 0; q < mm; q++)
                    for (int n = 0; n < LANES; n++)
                        dh[m + q][n] = acc[q][n];
            }
            filled++;
            if (filled == TBLK || t == 0) {
                int len = filled * LANES;
                CAT(accum_abt, SFX)(G, H, len, BL, gblk, hblk, dwh);
                CAT(accum_abt, SFX)(G, 1, len, BL, gblk, xblk, dwx);
                CAT(accum_rows, SFX)(G, len, BL, gblk, db);
                filled = 0;
            }
        }
    }
    for (int k = 0; k < H; k++) {
        real s = 0;
        for (int n = 0; n < LANES; n++)
            s += fcacc[k][n];
        dfcw[k] += s;
    }
    real s = 0;
    for (int n = 0; n < LANES; n++)
        s += fcbacc[n];
    dfcb[0] += s;
}

#undef CAT
#undef CAT_
