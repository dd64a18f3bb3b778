#include <stdio.h>
#include <string.h>
#include "dlvkl.h"

int main(void) {
    double x[40], y[40], mean[40], var[40];
    for (int i = 0; i < 40; i++) {
        x[i] = -2.0 + 0.1 * i;
        y[i] = x[i] > 0.0 ? -1.0 : 1.0;
    }
    DlvklModel *m = NULL;
    if (dlvkl_model_new("variant = svgp\nm = 10\nlengthscale = 1", x, 40, 1, 1, &m) != DLVKL_STATUS_OK) {
        fprintf(stderr, "new: %s\n", dlvkl_last_error());
        return 1;
    }
    double elbo = 0.0;
    if (dlvkl_model_fit(m, x, y, 40, 200, 40, 0.05, 1, &elbo) != DLVKL_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", dlvkl_last_error());
        return 1;
    }
    if (dlvkl_model_predict(m, x, 40, 1, 0, mean, var) != DLVKL_STATUS_OK) {
        return 1;
    }
    if (dlvkl_model_new("bogus = 1", x, 40, 1, 1, &m) != DLVKL_STATUS_CONFIG || strstr(dlvkl_last_error(), "bogus") == NULL) {
        return 1;
    }
    printf("%s %.3f %.3f %.3f\n", dlvkl_version(), elbo, mean[0], mean[39]);
    dlvkl_model_free(m);
    return 0;
}
