fn main() {
    println!("samrl");
}
