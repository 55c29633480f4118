"""INR-based CT reconstruction with stochastic Jacobian-vector gradients."""
