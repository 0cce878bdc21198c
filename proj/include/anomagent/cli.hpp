#pragma once

// Operator command surface. main() delegates here so the whole CLI is
// testable as a library function.
//
// Exit codes: 0 success, 1 task-level failures (failed episodes, invalid or
// unparseable rows), 2 usage errors (bad flags, bad configuration,
// unreadable paths).

namespace anomagent::cli {

int run(int argc, char** argv);

}  // namespace anomagent::cli
