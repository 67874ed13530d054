#include "app.hpp"

int main(int argc, char** argv) { return shwmpc::cli::run(argc, argv); }
