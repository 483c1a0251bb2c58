pub mod toy_net;
