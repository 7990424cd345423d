/* Minimal C consumer: build an abstraction from a problem document, list
 * the locations reachable within 0.4 time units, and validate.
 *
 * Build (from the repository root, after `cargo build -p lyapta-capi`):
 *   cc crates/capi/examples_c/demo.c -Icrates/capi/include \
 *      target/debug/liblyapta_capi.a -lpthread -ldl -lm -o demo
 */
#include <stdio.h>
#include <string.h>

#include "lyapta.h"

static const char *PROBLEM =
    "name = \"1d-stable\"\n"
    "mode = \"sound\"\n"
    "[system]\n"
    "kind = \"linear\"\n"
    "matrix = [[-1.0]]\n"
    "[domain]\n"
    "box = [[-2.5, 2.5]]\n"
    "grid_step = 0.01\n"
    "[[lyapunov]]\n"
    "p = [[1.0]]\n"
    "levels = [1.0, 2.0, 4.0]\n"
    "[initial]\n"
    "box = [[1.415, 1.995]]\n";

int main(void) {
    lyapta_abstraction *abs = NULL;
    lyapta_status status = lyapta_abstraction_build(PROBLEM, 0, &abs);
    if (status != LYAPTA_OK) {
        char msg[256] = {0};
        lyapta_last_error(msg, sizeof msg);
        fprintf(stderr, "build failed (%d): %s\n", (int)status, msg);
        return 1;
    }
    printf("locations: %zu\n", lyapta_abstraction_location_count(abs));
    printf("deterministic: %d\n", lyapta_abstraction_predicate(abs, 0));

    lyapta_reach_result *result = NULL;
    status = lyapta_reach(abs, 0.0, 0.4, 0, &result);
    if (status != LYAPTA_OK) {
        fprintf(stderr, "reach failed (%d)\n", (int)status);
        lyapta_abstraction_free(abs);
        return 1;
    }
    size_t n = lyapta_reach_result_count(result);
    printf("reached within [0, 0.4]: %zu\n", n);
    for (size_t i = 0; i < n; i++) {
        char name[64] = {0};
        if (lyapta_reach_result_name(result, i, name, sizeof name) == LYAPTA_OK) {
            printf("  %s\n", name);
        }
    }
    printf("volume: %.3f\n", lyapta_reach_result_volume(result));

    size_t violations = 0;
    status = lyapta_validate(abs, 200, 1.0, 42, &violations);
    printf("validate: status %d, %zu violations\n", (int)status, violations);

    lyapta_reach_result_free(result);
    lyapta_abstraction_free(abs);
    return status == LYAPTA_OK ? 0 : 2;
}
