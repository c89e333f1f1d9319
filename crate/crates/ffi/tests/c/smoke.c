#include <math.h>
#include <stdio.h>
#include <string.h>

#include "demix.h"

int main(void) {
    DemixInstance *inst = NULL;
    if (demix_instance_generate(2, 200, 4, 1.0, 0.0, 5, &inst) != DEMIX_STATUS_OK) {
        fprintf(stderr, "generate: %s\n", demix_last_error());
        return 1;
    }
    DemixDims dims;
    demix_instance_dims(inst, &dims);
    DemixSolverConfig cfg = {0.25, 200, 1e-8, 10};
    DemixRun *run = NULL;
    if (demix_solve(inst, &cfg, &run) != DEMIX_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", demix_last_error());
        return 1;
    }
    DemixRecord last;
    demix_run_record(run, demix_run_len(run) - 1, &last);
    double h[8], x[8];
    demix_run_estimate(run, 1, h, x);
    int bad = demix_instance_generate(1, 2, 4, 1.0, 0.0, 5, &inst) != DEMIX_STATUS_DIMENSION || strlen(demix_last_error()) == 0;
    printf("%zu %zu %zu %s %.3e\n", dims.s, dims.m, dims.k, demix_version(), last.relative_error);
    demix_run_free(run);
    demix_instance_free(inst);
    return bad || !(last.relative_error < 1e-6) || isnan(h[0]);
}
