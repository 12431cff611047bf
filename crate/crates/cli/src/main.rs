fn main() {
    println!("duodepth");
}
