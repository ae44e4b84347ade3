/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

#include "dfl/dfl.h"

static int failures = 0;

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            fprintf(stderr, "%s:%d: CHECK(%s)\n", __FILE__, __LINE__, #cond); \
            ++failures;                                              \
        }                                                            \
    } while (0)

static int log_lines = 0;
static void count_log(const char* line, void* user) {
    (void)line;
    ++*(int*)user;
}

static char root[256];

static const char* path(const char* leaf) {
    static char buf[4][512];
    static int slot = 0;
    slot = (slot + 1) % 4;
    snprintf(buf[slot], sizeof buf[slot], "%s/%s", root, leaf);
    return buf[slot];
}

static void test_basics(void) {
    CHECK(strcmp(dfl_version(), "0.1.0") == 0);
    CHECK(strcmp(dfl_status_name(DFL_OK), "ok") == 0);
    CHECK(strcmp(dfl_status_name(DFL_ERR_CONFIG), "config") == 0);

    dfl_config* cfg = NULL;
    CHECK(dfl_config_load(NULL, &cfg) == DFL_OK);
    CHECK(dfl_config_set(cfg, "mode", "sideways") == DFL_ERR_CONFIG);
    CHECK(strstr(dfl_last_error(), "sideways") != NULL);
    CHECK(dfl_config_set(cfg, "no_such_key", "1") != DFL_OK);
    CHECK(dfl_config_set(cfg, "epochs", "abc") == DFL_ERR_CONFIG);
    CHECK(dfl_config_set(cfg, "seed", "12") == DFL_OK);

    size_t need = 0;
    CHECK(dfl_config_to_json(cfg, NULL, 0, &need) == DFL_OK);
    CHECK(need > 2);
    char* text = malloc(need);
    CHECK(dfl_config_to_json(cfg, text, need, &need) == DFL_OK);
    CHECK(strstr(text, "\"seed\": 12") != NULL);
    dfl_config* back = NULL;
    CHECK(dfl_config_from_json(text, &back) == DFL_OK);
    size_t need2 = 0;
    char* text2 = malloc(need);
    CHECK(dfl_config_to_json(back, text2, need, &need2) == DFL_OK);
    CHECK(need2 == need && strcmp(text, text2) == 0);
    free(text);
    free(text2);
    dfl_config_free(back);
    dfl_config_free(cfg);

    CHECK(dfl_config_from_json("{\"bogus\":1}", &back) == DFL_ERR_CONFIG);
    CHECK(dfl_config_load(path("missing.json"), &back) == DFL_ERR_IO);
    CHECK(dfl_config_load(NULL, NULL) == DFL_ERR_INVALID_ARGUMENT);

    dfl_model* m = NULL;
    CHECK(dfl_model_load(path("nowhere"), &m) == DFL_ERR_IO);
    CHECK(m == NULL);
    CHECK(strlen(dfl_last_error()) > 0);
}

static void test_pipeline(void) {
    dfl_dataset_spec spec;
    dfl_dataset_spec_default(&spec);
    spec.image_size = 32;
    spec.real_count = 16;
    spec.fake_a = 0;
    spec.fake_b = 16;
    spec.fake_c = 0;
    spec.seed = 3;
    CHECK(dfl_generate_dataset(&spec, path("train")) == DFL_OK);
    spec.seed = 4;
    spec.real_count = 8;
    spec.fake_b = 8;
    CHECK(dfl_generate_dataset(&spec, path("eval")) == DFL_OK);

    size_t count = 0, real = 0, size = 0;
    CHECK(dfl_dataset_info(path("train"), &count, &real, &size) == DFL_OK);
    CHECK(count == 32 && real == 16 && size == 32);

    dfl_config* cfg = NULL;
    CHECK(dfl_config_from_json("{\"model\":{\"image_size\":32,\"grid\":4},\"batch_size\":8,\"min_real\":2,"
                               "\"min_fake\":2,\"epochs\":1,\"threads\":1}",
                               &cfg) == DFL_OK);
    CHECK(dfl_train(cfg, NULL) == DFL_ERR_CONFIG);
    CHECK(dfl_config_set(cfg, "train_data", path("train")) == DFL_OK);
    CHECK(dfl_config_set(cfg, "eval_data", path("eval")) == DFL_OK);
    CHECK(dfl_config_set(cfg, "out", path("run")) == DFL_OK);
    dfl_set_log(count_log, &log_lines);
    CHECK(dfl_train(cfg, NULL) == DFL_OK);
    dfl_set_log(NULL, NULL);
    CHECK(log_lines > 0);
    CHECK(access(path("run/loss.csv"), R_OK) == 0);
    CHECK(access(path("run/eval/metrics.json"), R_OK) == 0);

    dfl_metrics met;
    CHECK(dfl_evaluate(path("run/checkpoint"), path("eval"), NULL, &met) == DFL_OK);
    CHECK(met.samples == 16);
    CHECK(met.frame_auc >= 0.0 && met.frame_auc <= 1.0);
    CHECK(met.loc_accuracy >= 0.0 && met.loc_accuracy <= 1.0);

    dfl_model* m = NULL;
    CHECK(dfl_model_load(path("run/checkpoint"), &m) == DFL_OK);
    size_t s = 0, g = 0;
    CHECK(dfl_model_shape(m, &s, &g) == DFL_OK);
    CHECK(s == 32 && g == 4);

    double* img = malloc(sizeof(double) * 3 * 32 * 32);
    size_t len = 0;
    CHECK(dfl_read_image(path("eval/images/fakeB_000000.tnsr"), img, 3 * 32 * 32, &len) == DFL_OK);
    CHECK(len == 3 * 32 * 32);
    CHECK(dfl_read_image(path("eval/images/fakeB_000000.tnsr"), img, 10, &len) == DFL_ERR_SHAPE);

    double prob = -1, map[16], prob2 = -1, map2[16];
    CHECK(dfl_model_predict(m, img, len, &prob, map, 16) == DFL_OK);
    CHECK(prob > 0.0 && prob < 1.0);
    CHECK(dfl_model_predict(m, img, len, &prob2, map2, 16) == DFL_OK);
    CHECK(prob == prob2 && memcmp(map, map2, sizeof map) == 0);
    CHECK(dfl_model_predict(m, img, len, &prob, map, 9) == DFL_ERR_SHAPE);
    CHECK(dfl_model_predict(m, img, 100, &prob, map, 16) == DFL_ERR_SHAPE);

    double cam[32 * 32];
    size_t h = 0, w = 0;
    CHECK(dfl_model_grad_cam(m, img, len, "F", cam, 32 * 32, &h, &w) == DFL_OK);
    CHECK(h > 0 && w > 0);
    for (size_t i = 0; i < h * w; ++i) CHECK(cam[i] >= 0.0 && cam[i] <= 1.0);
    CHECK(dfl_model_grad_cam(m, img, len, "nope", cam, 32 * 32, &h, &w) == DFL_ERR_INVALID_ARGUMENT);
    CHECK(dfl_write_pgm(path("map.pgm"), map, 4, 4) == DFL_OK);

    /* resume with more epochs continues from the saved state */
    CHECK(dfl_config_set(cfg, "epochs", "2") == DFL_OK);
    CHECK(dfl_config_set(cfg, "out", path("run2")) == DFL_OK);
    CHECK(dfl_train(cfg, path("run/checkpoint")) == DFL_OK);
    CHECK(access(path("run2/checkpoint/manifest.json"), R_OK) == 0);

    free(img);
    dfl_model_free(m);
    dfl_config_free(cfg);
}

int main(void) {
    snprintf(root, sizeof root, "/tmp/dfl_test_capi_%ld", (long)getpid());
    test_basics();
    test_pipeline();
    char cmd[300];
    snprintf(cmd, sizeof cmd, "rm -rf %s", root);
    if (system(cmd) != 0) ++failures;
    if (failures) {
        fprintf(stderr, "%d check(s) failed\n", failures);
        return 1;
    }
    printf("capi: all checks passed\n");
    return 0;
}
