#include <math.h>
#include <stdio.h>
#include <string.h>

#include "nfplace.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        NfStatus s_ = (call);                                                \
        if (s_ != NF_STATUS_OK) {                                            \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, nf_last_error_message()); \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    if (strlen(nf_version()) == 0) return 1;
    if (nf_count_selections(6, 14, 12) != 48412) return 1;

    NfContext *ctx = NULL;
    CHECK(nf_context_from_json("{\"sampling\": {\"n_r\": 3, \"r_step_m\": 30, \"n_phi\": 4, \"phi_step_deg\": 45}}", &ctx));
    size_t n = 0;
    CHECK(nf_context_grid_len(ctx, &n));
    if (n != 20) return 1;

    size_t ids[] = {0, 3, 4, 9, 13, 14};
    double p = 0;
    CHECK(nf_peb(ctx, ids, 6, NF_MODE_COHERENT, 25.0, 30.0, &p));
    if (!(p > 0 && isfinite(p))) return 1;

    NfPebMap *map = NULL;
    CHECK(nf_peb_map(ctx, ids, 6, NF_MODE_INCOHERENT, &map));
    size_t n_phi = 0, n_r = 0;
    CHECK(nf_peb_map_dims(map, &n_phi, &n_r));
    if (n_phi != 4 || n_r != 3) return 1;
    double values[12];
    CHECK(nf_peb_map_values(map, values, 12));
    double rho = 0;
    CHECK(nf_peb_map_rho(map, 0.0, &rho));
    nf_peb_map_free(map);

    NfContext *missing = NULL;
    if (nf_context_from_file("/nonexistent/run.json", &missing) != NF_STATUS_CONFIG || missing != NULL) return 1;
    if (strstr(nf_last_error_message(), "/nonexistent/run.json") == NULL) return 1;

    nf_context_free(ctx);
    printf("ok %g %g\n", p, rho);
    return 0;
}
