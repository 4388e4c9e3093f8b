fn main() {
    callias_lab::init_parallelism();
}
