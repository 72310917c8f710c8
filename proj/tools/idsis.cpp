#include "idsis/commands.hpp"

int main(int argc, char** argv) { return idsis::cli::cli_main(argc, argv); }
