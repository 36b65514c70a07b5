from mpmath import mp, mpf, ncdf, quad, exp, sqrt, pi, log, loggamma, inf
mp.dps = 40
for x in [-8,-6.5,-5,-3,-1.5,-1,-0.5,-1e-3,0,0.3,1,2.5,5,8, -20, -37]:
    print("Phi", x, mp.nstr(ncdf(mpf(x)), 25))
def npdf(x): return exp(-x*x/2)/sqrt(2*pi)
def fg(phi, delta, z):
    phi=mpf(phi); delta=mpf(delta); z=mpf(z)
    logit=lambda q: log(q/(1-q))
    sz=(logit(z)-logit(phi)+delta**2/2)/delta
    f = quad(lambda s: phi*npdf(s-delta)+(1-phi)*npdf(s), [sz, sz+5, sz+15, inf])
    num = quad(lambda s: phi*npdf(s-delta), [sz, sz+5, sz+15, inf])
    return sz, f, num/f
for case in [(0.3,1.5,0.2),(0.5,2,0.5),(0.05,3,0.9),(0.02,1.5,0.05),(0.005,4,0.9)]:
    sz,f,g = fg(*case)
    print("fg", case, mp.nstr(sz,20), mp.nstr(f,20), mp.nstr(g,20))
# poisson + binomial log pmf example
print("pois", mp.nstr(10*log(10)-10-loggamma(11),20))
print("binom", mp.nstr(loggamma(11)-2*loggamma(6)+10*log(mpf('0.5')),20))
