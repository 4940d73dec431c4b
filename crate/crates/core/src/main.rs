fn main() {
    trajmask::cli::main();
}
