#pragma once

namespace soda {

/// Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 config error.
/// Failures print {"error": {"code": ..., "message": ...}} on stderr.
int cli_main(int argc, char** argv);

}  // namespace soda
