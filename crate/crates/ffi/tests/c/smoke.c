#include <stdio.h>
#include <string.h>

#include "veritopic.h"

/* usage: smoke MODEL TOPICS CLAIM EVIDENCE... */
int main(int argc, char **argv) {
    if (argc < 4) {
        fprintf(stderr, "usage: smoke MODEL TOPICS CLAIM EVIDENCE...\n");
        return 2;
    }
    VtVerifier *v = NULL;
    if (vt_verifier_load("/nonexistent/model", argv[2], 0, &v) != VT_STATUS_IO || vt_last_error() == NULL) {
        fprintf(stderr, "missing model was not reported as an I/O error\n");
        return 1;
    }
    VtStatus status = vt_verifier_load(argv[1], argv[2], 0, &v);
    if (status != VT_STATUS_OK) {
        fprintf(stderr, "load failed (%d): %s\n", (int)status, vt_last_error());
        return 1;
    }
    size_t n = (size_t)(argc - 4);
    VtLabel label;
    double rho[3];
    unsigned char selected[64] = {0};
    status = vt_verifier_predict(v, argv[3], (const char *const *)(argv + 4), n, &label, rho, selected);
    if (status != VT_STATUS_OK) {
        fprintf(stderr, "predict failed (%d): %s\n", (int)status, vt_last_error());
        vt_verifier_free(v);
        return 1;
    }
    printf("%d %.17g %.17g %.17g", (int)label, rho[0], rho[1], rho[2]);
    for (size_t i = 0; i < n; i++) {
        printf(" %d", selected[i]);
    }
    printf("\n");
    vt_verifier_free(v);
    return 0;
}
