/* Row primitives for the 3x3 convolution kernels.
 *
 * Each primitive makes one pass over a full image row and touches the
 * output exactly once, with all nine kernel taps fused, which keeps the
 * accumulator row hot instead of re-reading it per tap. The restrict
 * qualifiers promise the output never overlaps the source rows, which lets
 * the compiler vectorize the fused updates; the Python wrappers always
 * allocate fresh output arrays, so the promise holds. Boundary rows are
 * handled by passing a zero row, so every call is branch-free inside.
 */
#ifndef CSI_MTL_CONV_ROWS_H
#define CSI_MTL_CONV_ROWS_H

#include <stddef.h>

/* out[j] += sum over the three source rows (up/mid/dn) of their three
 * column taps, zero-padded at the row ends; w holds the 9 taps in
 * [row][col] order. */
#define ROW_TAPS9(NAME, T)                                                    \
    static void NAME(T *restrict out, const T *restrict up,                   \
                     const T *restrict mid, const T *restrict dn,             \
                     const T *restrict w, ptrdiff_t wd) {                     \
        ptrdiff_t j;                                                          \
        if (wd == 1) {                                                        \
            out[0] += w[1] * up[0] + w[4] * mid[0] + w[7] * dn[0];            \
            return;                                                           \
        }                                                                     \
        out[0] += w[1] * up[0] + w[2] * up[1]                                 \
                + w[4] * mid[0] + w[5] * mid[1]                               \
                + w[7] * dn[0] + w[8] * dn[1];                                \
        for (j = 1; j < wd - 1; j++)                                          \
            out[j] += w[0] * up[j - 1] + w[1] * up[j] + w[2] * up[j + 1]      \
                    + w[3] * mid[j - 1] + w[4] * mid[j] + w[5] * mid[j + 1]   \
                    + w[6] * dn[j - 1] + w[7] * dn[j] + w[8] * dn[j + 1];     \
        out[wd - 1] += w[0] * up[wd - 2] + w[1] * up[wd - 1]                  \
                     + w[3] * mid[wd - 2] + w[4] * mid[wd - 1]                \
                     + w[6] * dn[wd - 2] + w[7] * dn[wd - 1];                 \
    }

/* per-column products of one output-gradient row against the three input
 * rows it overlaps; b is a 9*wd buffer laid out as [row*3 + col][wd] */
#define ROW_PROD9(NAME, T)                                                    \
    static void NAME(T *restrict b, const T *restrict dyr,                    \
                     const T *restrict up, const T *restrict mid,             \
                     const T *restrict dn, ptrdiff_t wd) {                    \
        ptrdiff_t j;                                                          \
        T *b0 = b, *b1 = b + wd, *b2 = b + 2 * wd;                            \
        T *b3 = b + 3 * wd, *b4 = b + 4 * wd, *b5 = b + 5 * wd;               \
        T *b6 = b + 6 * wd, *b7 = b + 7 * wd, *b8 = b + 8 * wd;               \
        for (j = 0; j < wd; j++) {                                            \
            b1[j] += dyr[j] * up[j];                                          \
            b4[j] += dyr[j] * mid[j];                                         \
            b7[j] += dyr[j] * dn[j];                                          \
        }                                                                     \
        for (j = 1; j < wd; j++) {                                            \
            b0[j] += dyr[j] * up[j - 1];                                      \
            b3[j] += dyr[j] * mid[j - 1];                                     \
            b6[j] += dyr[j] * dn[j - 1];                                      \
        }                                                                     \
        for (j = 0; j < wd - 1; j++) {                                        \
            b2[j] += dyr[j] * up[j + 1];                                      \
            b5[j] += dyr[j] * mid[j + 1];                                     \
            b8[j] += dyr[j] * dn[j + 1];                                      \
        }                                                                     \
    }

#define ROW_ACC(NAME, T)                                                      \
    static void NAME(T *restrict acc, const T *restrict src, ptrdiff_t wd) {  \
        ptrdiff_t j;                                                          \
        for (j = 0; j < wd; j++)                                              \
            acc[j] += src[j];                                                 \
    }

ROW_TAPS9(row_taps9_f32, float)
ROW_TAPS9(row_taps9_f64, double)
ROW_PROD9(row_prod9_f32, float)
ROW_PROD9(row_prod9_f64, double)
ROW_ACC(row_acc_f32, float)
ROW_ACC(row_acc_f64, double)

#endif
