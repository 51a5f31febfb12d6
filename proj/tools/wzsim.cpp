#include <wzapprox/cli.hpp>

int main(int argc, char** argv) { return wz::cli::dispatch(argc, argv); }
