/* Minimal C consumer: load a world, list its tasks, run one, print what
 * happened. Build against include/webscout.h and link libwebscout_ffi.
 *
 *   cc demo.c -I../include -L<target-dir> -lwebscout_ffi -o demo
 *   ./demo ../../worlds/invite-member.json invite-member
 */

#include <stdio.h>
#include <stdlib.h>

#include "webscout.h"

static void bail(const char *stage) {
    char *why = ws_last_error_message();
    fprintf(stderr, "%s failed: %s\n", stage, why ? why : "(no detail)");
    ws_string_free(why);
    exit(2);
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s <world.json> <task-id>\n", argv[0]);
        return 2;
    }

    WsWorld *world = NULL;
    if (ws_world_load(argv[1], &world) != WsStatus_Ok) {
        bail("load");
    }

    size_t task_count = ws_world_task_count(world);
    printf("tasks: %zu\n", task_count);
    for (size_t i = 0; i < task_count; i++) {
        printf("  - %s\n", ws_world_task_id_at(world, i));
    }

    WsRunResult *result = NULL;
    if (ws_run_task(world, argv[2], NULL, true, NULL, &result) != WsStatus_Ok) {
        ws_world_free(world);
        bail("run");
    }

    printf("success: %s\n", ws_result_success(result) ? "yes" : "no");
    const char *answer = ws_result_answer(result);
    if (answer) {
        printf("answer: %s\n", answer);
    }
    size_t steps = ws_result_executed_len(result);
    for (size_t i = 0; i < steps; i++) {
        printf("step %zu: %s\n", i + 1, ws_result_executed_at(result, i));
    }
    printf("expansions: %u\n", ws_result_expansions(result));
    printf("trace hash: %s\n", ws_result_trace_hash(result));

    int exit_code = ws_result_success(result) ? 0 : 1;
    ws_result_free(result);
    ws_world_free(world);
    return exit_code;
}
