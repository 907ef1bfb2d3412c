/* Fits both estimators on a small synthetic data set through the C API.
 *
 *   cargo build -p condcov-ffi --release
 *   cc crates/ffi/examples/smoke.c -Icrates/ffi/include \
 *      target/release/libcondcov_ffi.a -lpthread -ldl -lm -o smoke && ./smoke
 */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "condcov.h"

#define N 400
#define Q 2
#define P 2

static int fail(const char *what, CcStatus s) {
    const char *msg = cc_last_error_message();
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, msg ? msg : "");
    return 1;
}

int main(void) {
    static double z[N * Q], x[N * P];
    unsigned long long state = 12345;
    for (int i = 0; i < N; i++) {
        double t = (double)i / N;
        z[i * Q] = 20.0 * t - 5.0;
        z[i * Q + 1] = 60.0 + 30.0 * sin(6.0 * t);
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        double u = (double)(state >> 11) / 9007199254740992.0 - 0.5;
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        double v = (double)(state >> 11) / 9007199254740992.0 - 0.5;
        x[i * P] = 4.0 + u;
        x[i * P + 1] = 5.0 + (t < 0.5 ? 0.9 : 0.1) * u + v;
    }

    CcDataset *ds = NULL;
    CcStatus s = cc_dataset_new(z, x, N, Q, P, &ds);
    if (s != CC_STATUS_OK) return fail("cc_dataset_new", s);

    CcKernelModel *nw = NULL;
    s = cc_kernel_fit(ds, 2.0, 2.0, &nw);
    if (s != CC_STATUS_OK) return fail("cc_kernel_fit", s);

    CcForest *rf = NULL;
    s = cc_forest_fit(ds, 2.0, 50, 0, 0, 7, &rf);
    if (s != CC_STATUS_OK) return fail("cc_forest_fit", s);

    double query[Q] = {0.0, 70.0};
    double corr_nw[P * P], corr_rf[P * P];
    s = cc_kernel_correlation(nw, query, Q, corr_nw, P * P);
    if (s != CC_STATUS_OK) return fail("cc_kernel_correlation", s);
    s = cc_forest_predict_corr(rf, query, Q, corr_rf, P * P);
    if (s != CC_STATUS_OK) return fail("cc_forest_predict_corr", s);

    /* A wrong query length must be reported, not crash. */
    s = cc_kernel_correlation(nw, query, 1, corr_nw + 0, P * P);
    if (s != CC_STATUS_DIMENSION_MISMATCH) return fail("dimension check", s);

    printf("condcov %s\n", cc_version());
    printf("nw corr %.6f forest corr %.6f\n", corr_nw[1], corr_rf[1]);

    cc_forest_free(rf);
    cc_kernel_free(nw);
    cc_dataset_free(ds);
    return 0;
}
