#include <stdio.h>
#include <string.h>
#include "dlgm.h"

int main(void) {
    const char *cfg = "{\"latent_dims\":[2],\"hidden\":6,\"minibatch\":2,\"steps\":5,\"seed\":3}";
    DlgmModel *m = NULL;
    if (dlgm_model_new(cfg, 4, &m) != DLGM_STATUS_OK) {
        fprintf(stderr, "new: %s\n", dlgm_last_error_message());
        return 1;
    }
    size_t visible, latent, layers;
    int32_t rank_one;
    if (dlgm_model_dims(m, &visible, &latent, &layers, &rank_one) != DLGM_STATUS_OK || visible != 4 || latent != 2) {
        return 2;
    }
    double data[8] = {1, 0, 1, 0, 0, 1, 1, 0};
    double fe = 0;
    if (dlgm_model_train(m, cfg, data, 2, 4, &fe) != DLGM_STATUS_OK || !(fe > 0)) {
        fprintf(stderr, "train: %s\n", dlgm_last_error_message());
        return 3;
    }
    double samples[12];
    if (dlgm_model_sample(m, 7, 3, samples, 12) != DLGM_STATUS_OK) {
        return 4;
    }
    if (dlgm_model_sample(m, 7, 3, samples, 11) != DLGM_STATUS_USAGE || dlgm_last_error_message() == NULL) {
        return 5;
    }
    if (dlgm_model_load("/nonexistent/model.dlgm", &m) != DLGM_STATUS_DATA) {
        return 6;
    }
    dlgm_model_free(m);
    printf("ok %s\n", dlgm_version());
    return 0;
}
